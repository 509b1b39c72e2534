use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::net::{EpochStats, Layer, NetSpec, Network};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
struct LayerRecord {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

/// On-disk JSON form of a network.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub spec: NetSpec,
    layers: Vec<LayerRecord>,
}

impl Checkpoint {
    pub fn from_network(net: &Network) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            spec: net.spec().clone(),
            layers: net
                .layers()
                .iter()
                .map(|l| LayerRecord {
                    rows: l.weights.rows(),
                    cols: l.weights.cols(),
                    weights: l.weights.as_slice().to_vec(),
                    bias: l.bias.clone(),
                })
                .collect(),
        }
    }

    pub fn into_network(self) -> Result<Network> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Parse(format!(
                "unsupported checkpoint version {}",
                self.version
            )));
        }
        let layers = self
            .layers
            .into_iter()
            .map(|r| {
                Ok(Layer {
                    weights: Matrix::new(r.rows, r.cols, r.weights)?,
                    bias: r.bias,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Network::from_layers(self.spec, layers)
    }
}

pub fn save_checkpoint(net: &Network, path: &Path) -> Result<()> {
    let json = serde_json::to_string(&Checkpoint::from_network(net))?;
    fs::write(path, json)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Network> {
    let text = fs::read_to_string(path)?;
    let ckpt: Checkpoint = serde_json::from_str(&text)?;
    ckpt.into_network()
}

/// `epoch,mean_loss` lines with a header.
pub fn write_loss_history<W: Write>(history: &[EpochStats], mut out: W) -> Result<()> {
    writeln!(out, "epoch,mean_loss")?;
    for s in history {
        writeln!(out, "{},{:?}", s.epoch, s.mean_loss)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::Activation;

    #[test]
    fn checkpoint_round_trip() {
        let spec = NetSpec::new(vec![3, 5, 2], Activation::Relu).unwrap();
        let net = Network::init(spec, 42).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.json");
        save_checkpoint(&net, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), net);
    }

    #[test]
    fn rejects_unknown_version_and_bad_shapes() {
        let spec = NetSpec::new(vec![2, 2], Activation::Tanh).unwrap();
        let mut ckpt = Checkpoint::from_network(&Network::init(spec, 0).unwrap());
        ckpt.layers[0].rows = 3;
        assert!(ckpt.clone().into_network().is_err());
        ckpt.version = 99;
        assert!(ckpt.into_network().is_err());
    }
}
