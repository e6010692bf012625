//! Versioned JSON checkpoints. Floats are written in shortest round-trip
//! form and parsed exactly, so save/load is bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Architecture, EqzNetBank, EqzNetParams, HeadLayer, InitKind, KBlock, TrainConfig};
use crate::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "eqznet-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub channel: String,
    pub taps: Vec<f64>,
    pub modulation: usize,
    pub ebn0_db: f64,
    pub noise_variance: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerRecord {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Row-major.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkRecord {
    /// Code bit this network estimates (0 for 2-PAM).
    pub bit: usize,
    pub architecture: String,
    pub k: usize,
    pub l: usize,
    pub n1: usize,
    pub n2: usize,
    pub layers: Vec<LayerRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub label: String,
    pub init: InitKind,
    pub train_config: TrainConfig,
    pub provenance: Provenance,
    pub networks: Vec<NetworkRecord>,
}

fn layer(name: String, rows: usize, cols: usize, values: &[f64]) -> LayerRecord {
    LayerRecord {
        name,
        rows,
        cols,
        values: values.to_vec(),
    }
}

impl NetworkRecord {
    pub fn from_params(bit: usize, p: &EqzNetParams) -> Self {
        let mut layers = Vec::new();
        for (i, b) in p.blocks.iter().enumerate() {
            layers.push(layer(format!("block{i}.w1"), b.width, b.fan_in, &b.w1));
            layers.push(layer(format!("block{i}.b1"), b.width, 1, &b.b1));
            layers.push(layer(format!("block{i}.w2"), 1, b.width, &b.w2));
        }
        if let Some(h) = &p.head {
            layers.push(layer("head.w".into(), 2, 2, &h.w));
            layers.push(layer("head.b".into(), 2, 1, &h.b));
            layers.push(layer("head.out".into(), 1, 2, &h.out));
        }
        Self {
            bit,
            architecture: p.architecture.tag().to_string(),
            k: p.architecture.k(),
            l: p.architecture.l(),
            n1: p.n1,
            n2: p.n2,
            layers,
        }
    }

    pub fn to_params(&self) -> Result<EqzNetParams> {
        let architecture = match self.architecture.as_str() {
            "k_eqznet" => Architecture::KEqzNet { k: self.k },
            "sum" => Architecture::Sum { k: self.k, l: self.l },
            "head" => Architecture::Head { k: self.k, l: self.l },
            other => return Err(Error::Checkpoint(format!("unknown architecture {other:?}"))),
        };
        let fan_in = self.n1 + self.n2 + 1;
        let find = |name: &str, rows: usize, cols: usize| -> Result<Vec<f64>> {
            let l = self
                .layers
                .iter()
                .find(|l| l.name == name)
                .ok_or_else(|| Error::Checkpoint(format!("missing layer {name}")))?;
            if l.rows != rows || l.cols != cols || l.values.len() != rows * cols {
                return Err(Error::Checkpoint(format!(
                    "layer {name}: declared {}x{} with {} values, expected {rows}x{cols}",
                    l.rows,
                    l.cols,
                    l.values.len()
                )));
            }
            Ok(l.values.clone())
        };
        let widths: Vec<usize> = match architecture {
            Architecture::KEqzNet { k } => vec![k],
            Architecture::Sum { k, l } | Architecture::Head { k, l } => vec![k, l],
        };
        let mut blocks = Vec::new();
        for (i, &width) in widths.iter().enumerate() {
            blocks.push(KBlock {
                width,
                fan_in,
                w1: find(&format!("block{i}.w1"), width, fan_in)?,
                b1: find(&format!("block{i}.b1"), width, 1)?,
                w2: find(&format!("block{i}.w2"), 1, width)?,
            });
        }
        let head = match architecture {
            Architecture::Head { .. } => {
                let arr = |v: Vec<f64>| -> [f64; 2] { [v[0], v[1]] };
                let w = find("head.w", 2, 2)?;
                Some(HeadLayer {
                    w: [w[0], w[1], w[2], w[3]],
                    b: arr(find("head.b", 2, 1)?),
                    out: arr(find("head.out", 1, 2)?),
                })
            }
            _ => None,
        };
        if self.layers.len() != blocks.len() * 3 + if head.is_some() { 3 } else { 0 } {
            return Err(Error::Checkpoint("unexpected extra layers".into()));
        }
        Ok(EqzNetParams {
            architecture,
            n1: self.n1,
            n2: self.n2,
            blocks,
            head,
        })
    }
}

impl Checkpoint {
    pub fn new(
        label: impl Into<String>,
        bank: &EqzNetBank,
        init: InitKind,
        train_config: TrainConfig,
        provenance: Provenance,
    ) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            label: label.into(),
            init,
            train_config,
            provenance,
            networks: bank
                .nets
                .iter()
                .enumerate()
                .map(|(bit, p)| NetworkRecord::from_params(bit, p))
                .collect(),
        }
    }

    pub fn bank(&self) -> Result<EqzNetBank> {
        if self.networks.is_empty() {
            return Err(Error::Checkpoint("checkpoint holds no networks".into()));
        }
        let mut nets = Vec::with_capacity(self.networks.len());
        for (i, rec) in self.networks.iter().enumerate() {
            if rec.bit != i {
                return Err(Error::Checkpoint(format!("network {i} is labelled bit {}", rec.bit)));
            }
            nets.push(rec.to_params()?);
        }
        Ok(EqzNetBank { nets })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("checkpoint serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("not an EqzNet checkpoint: {:?}", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {}", ck.version)));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eqznet::{compose_head, init_k_eqznet, init_random};
    use crate::lmmse::design_filter;
    use crate::txchain::ChannelModel;
    use proptest::prelude::*;

    fn provenance() -> Provenance {
        Provenance {
            channel: "h_A".into(),
            taps: crate::txchain::H_A.to_vec(),
            modulation: 2,
            ebn0_db: 12.5,
            noise_variance: 0.028117066259517456,
            seed: 7,
        }
    }

    #[test]
    fn head_round_trip() {
        let f = design_filter(&ChannelModel::preset("h_A", 0.03).unwrap(), 7, 7).unwrap();
        let h = compose_head(
            &init_k_eqznet(&f, 6, 2.0, 1.0).unwrap(),
            &init_k_eqznet(&f, 2, 2.0, 1.0).unwrap(),
            4,
        )
        .unwrap();
        let ck = Checkpoint::new("(6+2,2)", &EqzNetBank::single(h.clone()), InitKind::Lmmse, TrainConfig::default(), provenance());
        let back = Checkpoint::from_json(&ck.to_json()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.bank().unwrap().nets[0], h);
        assert_eq!(back.to_json(), ck.to_json());
    }

    #[test]
    fn rejects_bad_input() {
        let f = design_filter(&ChannelModel::preset("h_B", 0.03).unwrap(), 2, 2).unwrap();
        let p = init_k_eqznet(&f, 2, 2.0, 1.0).unwrap();
        let ck = Checkpoint::new("2", &EqzNetBank::single(p), InitKind::Lmmse, TrainConfig::default(), provenance());
        let mut bad = ck.clone();
        bad.version = 99;
        assert!(Checkpoint::from_json(&bad.to_json()).is_err());
        let mut bad = ck.clone();
        bad.networks[0].layers[0].rows = 3;
        assert!(bad.bank().is_err());
        let text = ck.to_json().replacen("\"label\"", "\"extra\": 1, \"label\"", 1);
        assert!(Checkpoint::from_json(&text).is_err());
        assert!(Checkpoint::from_json("{").is_err());
    }

    proptest! {
        #[test]
        fn arbitrary_weights_round_trip_bit_exactly(seed in any::<u64>(), scale in -1e6f64..1e6) {
            let mut p = init_random(Architecture::Head { k: 4, l: 2 }, 3, 2, seed).unwrap();
            let flat: Vec<f64> = p.to_flat().iter().map(|v| v * scale).collect();
            p.set_flat(&flat);
            let ck = Checkpoint::new("x", &EqzNetBank::single(p.clone()), InitKind::Random, TrainConfig::default(), provenance());
            let back = Checkpoint::from_json(&ck.to_json()).unwrap().bank().unwrap();
            let a: Vec<u64> = back.nets[0].to_flat().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = flat.iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
    }
}
