use std::path::Path;

use super::{ArchDescriptor, ConvConfig, ConvDenoiser};
use crate::error::{Error, Result};
use crate::nac::{ArrayData, Container};
use crate::scalar::Scalar;
use crate::schedule::VarianceSchedule;
use crate::watermark::WatermarkRecord;

pub const CHECKPOINT_FORMAT_VERSION: u64 = 1;

/// Trained parameters plus everything needed to reuse them safely.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<S> {
    pub arch: ArchDescriptor,
    pub params: Vec<S>,
    pub ema: Option<Vec<S>>,
    pub schedule_fingerprint: String,
    pub watermark: WatermarkRecord,
    pub step: usize,
}

impl<S: Scalar> Checkpoint<S> {
    pub fn to_container(&self) -> Result<Container> {
        let mut c = Container::new();
        c.insert_array("params", vec![self.params.len()], ArrayData::from_scalars(&self.params))?;
        if let Some(ema) = &self.ema {
            c.insert_array("ema", vec![ema.len()], ArrayData::from_scalars(ema))?;
        }
        c.insert_attr("format_version", CHECKPOINT_FORMAT_VERSION);
        c.insert_attr("arch", serde_json::to_value(&self.arch)?);
        c.insert_attr("schedule_fingerprint", self.schedule_fingerprint.clone());
        c.insert_attr("watermark", serde_json::to_value(&self.watermark)?);
        c.insert_attr("step", self.step as u64);
        Ok(c)
    }

    /// Fails when the file was written for a different schedule.
    pub fn from_container(c: &Container, schedule: &VarianceSchedule) -> Result<Self> {
        let version = c
            .attr("format_version")?
            .as_u64()
            .ok_or_else(|| Error::Container("format_version is not an integer".into()))?;
        if version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Container(format!(
                "checkpoint format {version}, expected {CHECKPOINT_FORMAT_VERSION}"
            )));
        }
        let fingerprint = c.attr_str("schedule_fingerprint")?.to_string();
        let expected = schedule.fingerprint();
        if fingerprint != expected {
            return Err(Error::FingerprintMismatch {
                file: fingerprint,
                expected,
            });
        }
        let ema = match c.arrays.get("ema") {
            Some(a) => Some(a.data.to_scalars()),
            None => None,
        };
        Ok(Self {
            arch: serde_json::from_value(c.attr("arch")?.clone())?,
            params: c.array("params")?.data.to_scalars(),
            ema,
            schedule_fingerprint: fingerprint,
            watermark: serde_json::from_value(c.attr("watermark")?.clone())?,
            step: c
                .attr("step")?
                .as_u64()
                .ok_or_else(|| Error::Container("step is not an integer".into()))?
                as usize,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container()?.save(path)
    }

    pub fn load(path: impl AsRef<Path>, schedule: &VarianceSchedule) -> Result<Self> {
        Self::from_container(&Container::load(path)?, schedule)
    }

    /// Rebuild the conv denoiser, from the EMA parameters when `use_ema` and present.
    pub fn conv_model(&self, use_ema: bool) -> Result<ConvDenoiser<S>> {
        if self.arch.id != "conv-film" {
            return Err(Error::Container(format!(
                "checkpoint holds a `{}` model",
                self.arch.id
            )));
        }
        let config: ConvConfig = serde_json::from_value(self.arch.hyper.clone())?;
        let params = match (&self.ema, use_ema) {
            (Some(ema), true) => ema.clone(),
            _ => self.params.clone(),
        };
        ConvDenoiser::from_params(config, params)
    }
}
