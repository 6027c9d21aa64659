//! `KDNN` checkpoints: magic, version, length-prefixed JSON architecture and
//! schedule descriptors, the kernel scale and a little-endian f32 payload.

use super::{DenoiserArch, DenoiserParams};
use crate::diffusion::ScheduleConfig;
use crate::error::{io_err, Error, Result};
use std::path::Path;

const MAGIC: &[u8; 4] = b"KDNN";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub arch: DenoiserArch,
    pub schedule: ScheduleConfig,
    pub kernel_scale: f64,
    pub params: DenoiserParams,
}

fn format_err(offset: usize, reason: impl Into<String>) -> Error {
    Error::Format {
        offset,
        reason: reason.into(),
    }
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.data.len() - self.pos < n {
            return Err(format_err(self.pos, format!("truncated {what}")));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn json<T: serde::de::DeserializeOwned>(&mut self, what: &str) -> Result<T> {
        let len = self.u32(what)? as usize;
        let at = self.pos;
        let bytes = self.take(len, what)?;
        serde_json::from_slice(bytes).map_err(|e| format_err(at, format!("{what}: {e}")))
    }
}

impl Checkpoint {
    /// Parameters are written as f32; values that are not f32-representable
    /// are rounded.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(64 + 4 * self.params.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for blob in [serde_json::to_vec(&self.arch)?, serde_json::to_vec(&self.schedule)?] {
            out.extend_from_slice(&(blob.len() as u32).to_le_bytes());
            out.extend_from_slice(&blob);
        }
        out.extend_from_slice(&self.kernel_scale.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for v in &self.params.values {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        let mut r = Reader { data, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(format_err(0, "bad magic, expected KDNN"));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(format_err(4, format!("unsupported version {version}")));
        }
        let arch_at = r.pos;
        let arch: DenoiserArch = r.json("architecture")?;
        arch.validate().map_err(|e| format_err(arch_at, e.to_string()))?;
        let schedule: ScheduleConfig = r.json("schedule")?;
        let kernel_scale = f64::from_le_bytes(r.take(8, "kernel scale")?.try_into().unwrap());
        let count_at = r.pos;
        let count = r.u64("parameter count")? as usize;
        if count != arch.param_count() {
            return Err(format_err(
                count_at,
                format!("{count} parameters, architecture needs {}", arch.param_count()),
            ));
        }
        let payload = r.take(count.checked_mul(4).ok_or_else(|| format_err(count_at, "count overflow"))?, "parameters")?;
        if r.pos != data.len() {
            return Err(format_err(r.pos, "trailing bytes"));
        }
        let values = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        Ok(Self {
            arch,
            schedule,
            kernel_scale,
            params: DenoiserParams { values },
        })
    }

    /// Errors naming the first field where the stored architecture differs.
    pub fn expect_arch(&self, arch: &DenoiserArch) -> Result<()> {
        let mismatch = |field: &str, stored: String, wanted: String| Error::Mismatch {
            field: field.into(),
            reason: format!("checkpoint has {stored}, expected {wanted}"),
        };
        let a = &self.arch;
        if a.kernel_size != arch.kernel_size {
            return Err(mismatch("kernel_size", a.kernel_size.to_string(), arch.kernel_size.to_string()));
        }
        if a.image_size != arch.image_size {
            return Err(mismatch("image_size", a.image_size.to_string(), arch.image_size.to_string()));
        }
        if a.channels != arch.channels {
            return Err(mismatch("channels", format!("{:?}", a.channels), format!("{:?}", arch.channels)));
        }
        if a.time_embed_dim != arch.time_embed_dim {
            return Err(mismatch(
                "time_embed_dim",
                a.time_embed_dim.to_string(),
                arch.time_embed_dim.to_string(),
            ));
        }
        Ok(())
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    std::fs::write(path, ckpt.to_bytes()?).map_err(io_err(path.display().to_string()))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let data = std::fs::read(path).map_err(io_err(path.display().to_string()))?;
    Checkpoint::from_bytes(&data)
}

#[cfg(test)]
mod tests {
    use super::super::{forward, init_params};
    use super::*;
    use crate::image::Image;
    use ndarray::Array2;

    fn sample() -> Checkpoint {
        let arch = DenoiserArch::default();
        Checkpoint {
            params: init_params(&arch, 4).unwrap(),
            arch,
            schedule: ScheduleConfig::default(),
            kernel_scale: 30.25,
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let c = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.kdnn");
        save_checkpoint(&path, &c).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, c);
        let k = Array2::from_elem((11, 11), 0.3);
        let y = Image::constant(32, 32, 0.4).unwrap();
        assert_eq!(
            forward(&c.params, &c.arch, &k, &y, 9).unwrap(),
            forward(&back.params, &back.arch, &k, &y, 9).unwrap()
        );
    }

    #[test]
    fn mismatches_are_named() {
        let c = sample();
        let other = DenoiserArch {
            channels: vec![4, 8],
            ..DenoiserArch::default()
        };
        match c.expect_arch(&other) {
            Err(Error::Mismatch { field, .. }) => assert_eq!(field, "channels"),
            r => panic!("{r:?}"),
        }
        assert!(c.expect_arch(&DenoiserArch::default()).is_ok());
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = sample().to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Format { offset: 0, .. })));
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(matches!(Checkpoint::from_bytes(&v2), Err(Error::Format { offset: 4, .. })));
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 2]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }
}
