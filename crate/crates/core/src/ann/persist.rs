//! Text persistence for trained networks.
//!
//! ```text
//! # qsense mlp v1
//! # init-seed: 5
//! # train-seed: 7
//! # widths: 2 3 1
//! # ts # qsense training-set v1
//! # ts # model: qubit
//! # ts ...
//! w 0.12 -0.4 0.9
//! w 0.3 0.01 -1.2
//! b 0.0 0.1 0.0
//! w 1.1
//! w -0.2
//! w 0.5
//! b 0.3
//! ```
//!
//! Each layer is written as `fan_in` rows of `w` followed by one `b` row.
//! `ts` lines carry the header of the training set the network was fitted
//! to. Values use the shortest round-tripping float representation, so a
//! reload reproduces every forward output bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::mlp::{Layer, MlpParams};
use crate::{Error, Result};

const MAGIC: &str = "# qsense mlp v1";

#[derive(Clone, Debug, PartialEq)]
pub struct ModelFile {
    pub params: MlpParams,
    pub train_seed: u64,
    /// Header block of the producing training set.
    pub training_header: String,
}

impl ModelFile {
    pub fn to_text(&self) -> String {
        let p = &self.params;
        let mut s = String::new();
        let _ = writeln!(s, "{MAGIC}");
        let _ = writeln!(s, "# init-seed: {}", p.seed());
        let _ = writeln!(s, "# train-seed: {}", self.train_seed);
        let _ = write!(s, "# widths: {}", p.input_width());
        for l in p.layers() {
            let _ = write!(s, " {}", l.fan_out());
        }
        s.push('\n');
        for line in self.training_header.lines() {
            let _ = writeln!(s, "# ts {line}");
        }
        for l in p.layers() {
            for row in l.weights.rows() {
                s.push('w');
                for v in row {
                    let _ = write!(s, " {v:?}");
                }
                s.push('\n');
            }
            s.push('b');
            for v in &l.bias {
                let _ = write!(s, " {v:?}");
            }
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().peekable();
        match lines.next() {
            Some((_, l)) if l == MAGIC => {}
            _ => return Err(Error::parse(1, "missing model magic line")),
        }
        let mut init_seed = None;
        let mut train_seed = None;
        let mut widths: Option<Vec<usize>> = None;
        let mut training_header = String::new();
        while let Some(&(i, line)) = lines.peek() {
            let Some(rest) = line.strip_prefix("# ") else { break };
            lines.next();
            if let Some(ts) = rest.strip_prefix("ts ") {
                training_header.push_str(ts);
                training_header.push('\n');
            } else if let Some(v) = rest.strip_prefix("init-seed: ") {
                init_seed = Some(v.parse::<u64>().map_err(|_| Error::parse(i + 1, "bad init-seed"))?);
            } else if let Some(v) = rest.strip_prefix("train-seed: ") {
                train_seed = Some(v.parse::<u64>().map_err(|_| Error::parse(i + 1, "bad train-seed"))?);
            } else if let Some(v) = rest.strip_prefix("widths: ") {
                let w = v
                    .split_whitespace()
                    .map(str::parse::<usize>)
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| Error::parse(i + 1, "bad widths"))?;
                widths = Some(w);
            } else {
                return Err(Error::parse(i + 1, format!("unknown header line {line:?}")));
            }
        }
        let widths = widths.ok_or_else(|| Error::parse(0, "missing widths"))?;
        if widths.len() < 2 {
            return Err(Error::parse(0, "need at least input and output widths"));
        }
        let mut row = |tag: char, len: usize| -> Result<Vec<f64>> {
            let (i, line) = lines.next().ok_or_else(|| Error::parse(0, "unexpected end of file"))?;
            let mut it = line.split(' ');
            if it.next() != Some(&tag.to_string()[..]) {
                return Err(Error::parse(i + 1, format!("expected a `{tag}` row")));
            }
            let vals = it
                .map(str::parse::<f64>)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| Error::parse(i + 1, "bad number"))?;
            if vals.len() != len {
                return Err(Error::parse(i + 1, format!("expected {len} values, found {}", vals.len())));
            }
            Ok(vals)
        };
        let mut layers = Vec::new();
        for w in widths.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let mut flat = Vec::with_capacity(fan_in * fan_out);
            for _ in 0..fan_in {
                flat.extend(row('w', fan_out)?);
            }
            let weights = Array2::from_shape_vec((fan_in, fan_out), flat).expect("row count checked");
            let bias = Array1::from_vec(row('b', fan_out)?);
            layers.push(Layer { weights, bias });
        }
        if let Some((i, _)) = lines.find(|(_, l)| !l.is_empty()) {
            return Err(Error::parse(i + 1, "trailing content"));
        }
        let params = MlpParams::from_layers(layers, init_seed.ok_or_else(|| Error::parse(0, "missing init-seed"))?)?;
        Ok(Self {
            params,
            train_seed: train_seed.ok_or_else(|| Error::parse(0, "missing train-seed"))?,
            training_header,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ann::init_network;

    #[test]
    fn round_trip_preserves_forward_outputs_bitwise() {
        let mut params = init_network(3, &[7, 5], 42).unwrap();
        params.layers_mut()[2].bias[0] = 0.1 + 0.2;
        let file = ModelFile {
            params,
            train_seed: 9,
            training_header: "# qsense training-set v1\n# model: twin_fock 2\n".into(),
        };
        let back = ModelFile::from_text(&file.to_text()).unwrap();
        assert_eq!(back, file);
        for x in [[0.1, 0.2, 0.7], [1.0, 0.0, 0.0], [0.33, 0.33, 0.34]] {
            let a = file.params.forward_slice(&x).unwrap();
            let b = back.params.forward_slice(&x).unwrap();
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(back.to_text(), file.to_text());
    }

    #[test]
    fn truncated_files_are_rejected() {
        let file = ModelFile {
            params: init_network(2, &[3], 1).unwrap(),
            train_seed: 0,
            training_header: String::new(),
        };
        let text = file.to_text();
        let cut: String = text.lines().take(5).map(|l| format!("{l}\n")).collect();
        assert!(ModelFile::from_text(&cut).is_err());
        assert!(ModelFile::from_text("nope").is_err());
    }
}
