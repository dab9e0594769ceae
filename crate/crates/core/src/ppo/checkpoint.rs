//! Plain-text tensor dump of a [`PolicyNetwork`].
//!
//! ```text
//! asv-policy 1
//! hidden 128 128
//! tensor actor.0.w 6 128
//! <row-major values>
//! ...
//! ```
//! Values use Rust's shortest round-trip float formatting, so a save/load
//! cycle is bit-exact.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::net::Mlp;
use super::policy::{ObsNormalizer, Params, PolicyNetwork};
use crate::error::{Error, Result};

pub const MAGIC: &str = "asv-policy";
pub const VERSION: u32 = 1;

fn push_tensor(out: &mut String, name: &str, shape: &[usize], values: &[f64]) {
    let dims: Vec<String> = shape.iter().map(usize::to_string).collect();
    let _ = writeln!(out, "tensor {name} {}", dims.join(" "));
    let vals: Vec<String> = values.iter().map(|v| format!("{v:?}")).collect();
    let _ = writeln!(out, "{}", vals.join(" "));
}

pub fn to_string(net: &PolicyNetwork) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC} {VERSION}");
    let hidden: Vec<String> = net.hidden.iter().map(usize::to_string).collect();
    let _ = writeln!(out, "hidden {}", hidden.join(" "));
    for (prefix, mlp) in [("actor", &net.params.actor), ("critic", &net.params.critic)] {
        for (i, layer) in mlp.layers.iter().enumerate() {
            push_tensor(&mut out, &format!("{prefix}.{i}.w"), &[layer.w.nrows(), layer.w.ncols()], layer.w.as_slice().expect("standard layout"));
            push_tensor(&mut out, &format!("{prefix}.{i}.b"), &[layer.b.len()], layer.b.as_slice().expect("standard layout"));
        }
    }
    push_tensor(&mut out, "log_std", &[net.params.log_std.len()], net.params.log_std.as_slice().expect("standard layout"));
    push_tensor(&mut out, "obs_norm.mean", &[net.obs_norm.mean.len()], net.obs_norm.mean.as_slice().expect("standard layout"));
    push_tensor(&mut out, "obs_norm.var", &[net.obs_norm.var.len()], net.obs_norm.var.as_slice().expect("standard layout"));
    push_tensor(&mut out, "obs_norm.count", &[1], &[net.obs_norm.count]);
    out
}

struct Reader<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Reader<'a> {
    fn next_line(&mut self) -> Result<(usize, &'a str)> {
        self.lines
            .next()
            .map(|(i, l)| (i + 1, l))
            .ok_or_else(|| Error::Checkpoint("unexpected end of file".into()))
    }

    fn tensor(&mut self, name: &str, shape: &[usize]) -> Result<Vec<f64>> {
        let (ln, header) = self.next_line()?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some("tensor") || parts.next() != Some(name) {
            return Err(Error::Checkpoint(format!("line {ln}: expected tensor `{name}`, found `{header}`")));
        }
        let dims: Vec<usize> = parts
            .map(|p| p.parse().map_err(|_| Error::Checkpoint(format!("line {ln}: bad dimension `{p}`"))))
            .collect::<Result<_>>()?;
        if dims != shape {
            return Err(Error::Checkpoint(format!(
                "architecture mismatch for `{name}`: checkpoint has shape {dims:?}, expected {shape:?}"
            )));
        }
        let (ln, body) = self.next_line()?;
        let values: Vec<f64> = body
            .split_whitespace()
            .map(|p| p.parse().map_err(|_| Error::Checkpoint(format!("line {ln}: bad value `{p}`"))))
            .collect::<Result<_>>()?;
        if values.len() != shape.iter().product::<usize>() {
            return Err(Error::Checkpoint(format!("line {ln}: `{name}` has {} values", values.len())));
        }
        Ok(values)
    }

    fn mlp(&mut self, prefix: &str, sizes: &[usize]) -> Result<Mlp> {
        let mut layers = Vec::new();
        for i in 0..sizes.len() - 1 {
            let w = self.tensor(&format!("{prefix}.{i}.w"), &[sizes[i], sizes[i + 1]])?;
            let b = self.tensor(&format!("{prefix}.{i}.b"), &[sizes[i + 1]])?;
            layers.push(super::net::Dense {
                w: Array2::from_shape_vec((sizes[i], sizes[i + 1]), w).expect("checked shape"),
                b: Array1::from(b),
            });
        }
        Ok(Mlp { layers })
    }
}

/// Parses a checkpoint; `expected_hidden` (when given) must match.
pub fn from_str(text: &str, expected_hidden: Option<&[usize]>) -> Result<PolicyNetwork> {
    use super::policy::{ACTION_DIM, OBS_DIM};
    let mut r = Reader { lines: text.lines().enumerate() };
    let (_, head) = r.next_line()?;
    let mut parts = head.split_whitespace();
    if parts.next() != Some(MAGIC) {
        return Err(Error::Checkpoint("not a policy checkpoint (bad magic)".into()));
    }
    let version: u32 = parts
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Checkpoint("missing version".into()))?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}; this build reads version {VERSION}")));
    }
    let (ln, hidden_line) = r.next_line()?;
    let mut parts = hidden_line.split_whitespace();
    if parts.next() != Some("hidden") {
        return Err(Error::Checkpoint(format!("line {ln}: expected `hidden`")));
    }
    let hidden: Vec<usize> = parts
        .map(|p| p.parse().map_err(|_| Error::Checkpoint(format!("line {ln}: bad width `{p}`"))))
        .collect::<Result<_>>()?;
    if hidden.is_empty() {
        return Err(Error::Checkpoint("no hidden layers".into()));
    }
    if let Some(expected) = expected_hidden {
        if expected != hidden.as_slice() {
            return Err(Error::Checkpoint(format!(
                "architecture mismatch: checkpoint hidden layers {hidden:?}, configured {expected:?}"
            )));
        }
    }
    let mut actor_sizes = vec![OBS_DIM];
    actor_sizes.extend(&hidden);
    let mut critic_sizes = actor_sizes.clone();
    actor_sizes.push(ACTION_DIM);
    critic_sizes.push(1);
    let actor = r.mlp("actor", &actor_sizes)?;
    let critic = r.mlp("critic", &critic_sizes)?;
    let log_std = Array1::from(r.tensor("log_std", &[ACTION_DIM])?);
    let mean = Array1::from(r.tensor("obs_norm.mean", &[OBS_DIM])?);
    let var = Array1::from(r.tensor("obs_norm.var", &[OBS_DIM])?);
    let count = r.tensor("obs_norm.count", &[1])?[0];
    Ok(PolicyNetwork {
        params: Params { actor, log_std, critic },
        obs_norm: ObsNormalizer { mean, var, count },
        hidden,
    })
}

pub fn save(net: &PolicyNetwork, path: &Path) -> Result<()> {
    std::fs::write(path, to_string(net)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path, expected_hidden: Option<&[usize]>) -> Result<PolicyNetwork> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_str(&text, expected_hidden)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut net = PolicyNetwork::new(&[8, 5], -0.3, &mut rng);
        net.obs_norm.mean[2] = 1.0 / 3.0;
        let back = from_str(&to_string(&net), Some(&[8, 5])).unwrap();
        assert_eq!(back, net);
    }

    #[test]
    fn rejects_mismatches() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = PolicyNetwork::new(&[8, 5], 0.0, &mut rng);
        let text = to_string(&net);
        assert!(matches!(from_str(&text, Some(&[128, 128])), Err(Error::Checkpoint(_))));
        let bumped = text.replacen("asv-policy 1", "asv-policy 2", 1);
        let err = from_str(&bumped, None).unwrap_err().to_string();
        assert!(err.contains("version 2"), "{err}");
        assert!(from_str("hello", None).is_err());
    }
}
