//! Parameter checkpoint files.
//!
//! Layout (little-endian): magic `UWNP`, u32 version, architecture JSON
//! (u64 length + UTF-8), dims `M, M', N` as u64, u64 section count, then per
//! section: name (u64 length + UTF-8), u64 rank, rank u64 extents, values as
//! f64. Learnable tensors come first in network order, followed by each
//! block's `running_mean` and `running_var`. A trailing u8 flags an Adam
//! state: u64 step, four f64 hyperparameters, then first and second moments
//! as sections in learnable order.

use std::fs;
use std::path::Path;

use uwamod_core::io::{ByteReader, ByteWriter};
use uwamod_core::{Error, Result};

use crate::adam::{AdamHyper, AdamState};
use crate::model::{block_names, init_params, ArchConfig, NetDims, NetworkParams, ParamSet, RunningStats, Tensor};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"UWNP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: NetworkParams,
    pub adam: Option<AdamState>,
}

fn write_section(w: &mut ByteWriter, name: &str, shape: &[usize], data: &[f64]) {
    w.str(name);
    w.u64(shape.len() as u64);
    for &d in shape {
        w.u64(d as u64);
    }
    w.f64_slice(data);
}

fn read_section(r: &mut ByteReader<'_>, name: &str, shape: &[usize]) -> Result<Vec<f64>> {
    let got = r.str()?;
    if got != name {
        return Err(Error::Malformed(format!("expected section {name}, found {got}")));
    }
    let rank = r.len_u64()?;
    let mut extents = Vec::with_capacity(rank.min(8));
    for _ in 0..rank {
        extents.push(r.len_u64()?);
    }
    if extents != shape {
        return Err(Error::Malformed(format!("section {name} has shape {extents:?}, expected {shape:?}")));
    }
    r.f64_vec(shape.iter().product())
}

fn running_sections(params: &NetworkParams) -> Vec<(String, Vec<f64>)> {
    let mut out = Vec::new();
    for (name, stats) in block_names().iter().zip(&params.running) {
        out.push((format!("{name}.running_mean"), stats.mean.clone()));
        out.push((format!("{name}.running_var"), stats.var.clone()));
    }
    out
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let p = &self.params;
        let mut w = ByteWriter::new();
        w.bytes(&CHECKPOINT_MAGIC);
        w.u32(CHECKPOINT_VERSION);
        w.str(&serde_json::to_string(&p.arch).expect("architecture serializes"));
        for d in [p.dims.m, p.dims.m_prime, p.dims.n] {
            w.u64(d as u64);
        }
        let running = running_sections(p);
        w.u64((p.learnable.tensors.len() + running.len()) as u64);
        for t in &p.learnable.tensors {
            write_section(&mut w, &t.name, &t.shape, &t.data);
        }
        for (name, data) in &running {
            write_section(&mut w, name, &[data.len()], data);
        }
        match &self.adam {
            None => w.u8(0),
            Some(a) => {
                w.u8(1);
                w.u64(a.step);
                for h in [a.hyper.beta1, a.hyper.beta2, a.hyper.lr, a.hyper.eps] {
                    w.f64(h);
                }
                for set in [&a.first, &a.second] {
                    for t in &set.tensors {
                        write_section(&mut w, &t.name, &t.shape, &t.data);
                    }
                }
            }
        }
        w.into_inner()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let magic = r.magic()?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::BadMagic(magic));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::UnsupportedVersion { kind: "checkpoint", version });
        }
        let arch: ArchConfig = serde_json::from_str(r.str()?)?;
        arch.validate()?;
        let (m, m_prime, n) = (r.len_u64()?, r.len_u64()?, r.len_u64()?);
        // A fresh initialization supplies the expected names and shapes.
        let template = init_params(&arch, NetDims::new(m, m_prime, n), &mut uwamod_core::spawn_stream(0, "layout"))?;
        let sections = r.len_u64()?;
        let running_names = running_sections(&template);
        if sections != template.learnable.tensors.len() + running_names.len() {
            return Err(Error::Malformed(format!("unexpected section count {sections}")));
        }
        let read_set = |r: &mut ByteReader<'_>| -> Result<ParamSet> {
            let mut tensors = Vec::with_capacity(template.learnable.tensors.len());
            for t in &template.learnable.tensors {
                let data = read_section(r, &t.name, &t.shape)?;
                tensors.push(Tensor { name: t.name.clone(), shape: t.shape.clone(), data });
            }
            Ok(ParamSet { tensors })
        };
        let learnable = read_set(&mut r)?;
        let mut values = Vec::with_capacity(running_names.len());
        for (name, like) in &running_names {
            values.push(read_section(&mut r, name, &[like.len()])?);
        }
        let mut it = values.into_iter();
        let mut running = Vec::new();
        while let (Some(mean), Some(var)) = (it.next(), it.next()) {
            if var.iter().any(|&v| !(v > 0.0)) {
                return Err(Error::Malformed("running variance must be positive".into()));
            }
            running.push(RunningStats { mean, var });
        }
        let params = NetworkParams { arch, dims: template.dims, learnable, running };
        let adam = match r.u8()? {
            0 => None,
            1 => {
                let step = r.u64()?;
                let hyper = AdamHyper { beta1: r.f64()?, beta2: r.f64()?, lr: r.f64()?, eps: r.f64()? };
                let first = read_set(&mut r)?;
                let second = read_set(&mut r)?;
                Some(AdamState { hyper, step, first, second })
            }
            flag => return Err(Error::Malformed(format!("adam flag {flag}"))),
        };
        r.finish()?;
        Ok(Self { params, adam })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }
}

/// Human-readable summary of a checkpoint file.
pub fn describe_checkpoint(bytes: &[u8]) -> Result<String> {
    let ck = Checkpoint::decode(bytes)?;
    let p = &ck.params;
    Ok(format!(
        "checkpoint (UWNP v{CHECKPOINT_VERSION})\n  arch: {}\n  dims: M={} M'={} N={}\n  parameters: {}\n  adam: {}",
        serde_json::to_string(&p.arch).expect("architecture serializes"),
        p.dims.m,
        p.dims.m_prime,
        p.dims.n,
        p.parameter_count(),
        ck.adam.as_ref().map_or("none".to_string(), |a| format!("step {}", a.step)),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adam::adam_step;
    use uwamod_core::spawn_stream;

    fn sample() -> NetworkParams {
        init_params(&ArchConfig::tiny(), NetDims::new(16, 24, 10), &mut spawn_stream(4, "init")).unwrap()
    }

    #[test]
    fn roundtrip_without_and_with_adam() {
        let mut params = sample();
        params.running[2].mean[1] = -0.25;
        params.running[6].var[0] = 3.5;
        let plain = Checkpoint { params: params.clone(), adam: None };
        let bytes = plain.encode();
        let back = Checkpoint::decode(&bytes).unwrap();
        assert_eq!(back, plain);
        assert_eq!(back.encode(), bytes);

        let mut adam = AdamState::new(&params.learnable);
        let mut grads = params.learnable.zeros_like();
        grads.tensors[0].data[0] = 0.5;
        adam_step(&mut params.learnable, &grads, &mut adam).unwrap();
        let full = Checkpoint { params, adam: Some(adam) };
        let bytes = full.encode();
        assert_eq!(Checkpoint::decode(&bytes).unwrap(), full);
        assert!(describe_checkpoint(&bytes).unwrap().contains("step 1"));
    }

    #[test]
    fn truncation_and_magic_errors() {
        let bytes = Checkpoint { params: sample(), adam: None }.encode();
        assert!(matches!(
            Checkpoint::decode(&bytes[..bytes.len() - 3]),
            Err(Error::Truncated { .. })
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::decode(&bad), Err(Error::BadMagic(_))));
        let mut extra = bytes;
        extra.push(0);
        assert!(matches!(Checkpoint::decode(&extra), Err(Error::Malformed(_))));
    }
}
