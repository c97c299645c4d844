//! Decision-level fusion of per-sensor SIC and uncertainty maps.

use std::path::Path;

use crate::container::{Container, NamedTensor};
use crate::error::{Error, Result};
use crate::synth::Sensor;
use crate::uq::{UncertaintyField, UqMethod};

/// Value stored in mean and uncertainty grids where no sensor supplied data.
pub const NODATA: f32 = -1.0;

/// One sensor's prediction with its swath mask. `uncertainty` is in percent.
#[derive(Clone, Debug, PartialEq)]
pub struct SensorLayer {
    pub sensor: Sensor,
    pub height: usize,
    pub width: usize,
    pub mean: Vec<f32>,
    pub uncertainty: Vec<f32>,
    pub mask: Vec<bool>,
}

impl SensorLayer {
    pub fn new(sensor: Sensor, height: usize, width: usize, mean: Vec<f32>, uncertainty: Vec<f32>, mask: Vec<bool>) -> Result<Self> {
        let n = height * width;
        if mean.len() != n || uncertainty.len() != n || mask.len() != n {
            return Err(Error::Dimension {
                op: "sensor layer",
                lhs: vec![height, width],
                rhs: vec![mean.len(), uncertainty.len(), mask.len()],
            });
        }
        Ok(Self { sensor, height, width, mean, uncertainty, mask })
    }

    /// Layer from a field; the field must carry a sensor tag.
    pub fn from_field(f: &UncertaintyField) -> Result<Self> {
        let sensor = f.sensor.ok_or_else(|| Error::Config("uncertainty field has no sensor tag".into()))?;
        let unc = f.uncertainty_pct().into_iter().map(|v| v as f32).collect();
        let mask = f.coverage.clone().unwrap_or_else(|| vec![true; f.mean.len()]);
        Self::new(sensor, f.height, f.width, f.mean.clone(), unc, mask)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FusionMode {
    /// First covering layer wins.
    #[default]
    Priority,
    /// Covering layer with the lowest uncertainty wins; ties go to the earlier layer.
    LowestUncertainty,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mosaic {
    pub height: usize,
    pub width: usize,
    pub mean: Vec<f32>,
    pub uncertainty: Vec<f32>,
    pub provenance: Vec<Option<Sensor>>,
    pub method: Option<UqMethod>,
    pub scene: Option<usize>,
}

pub fn mosaic(layers: &[SensorLayer]) -> Result<Mosaic> {
    mosaic_with(layers, FusionMode::Priority)
}

/// Fuses layers given top layer first.
pub fn mosaic_with(layers: &[SensorLayer], mode: FusionMode) -> Result<Mosaic> {
    let first = layers.first().ok_or(Error::TooFew { what: "mosaic layers", need: 1, got: 0 })?;
    let (height, width) = (first.height, first.width);
    for l in layers {
        if (l.height, l.width) != (height, width) {
            return Err(Error::Dimension { op: "mosaic", lhs: vec![height, width], rhs: vec![l.height, l.width] });
        }
    }
    let n = height * width;
    let mut m = Mosaic {
        height,
        width,
        mean: vec![NODATA; n],
        uncertainty: vec![NODATA; n],
        provenance: vec![None; n],
        method: None,
        scene: None,
    };
    for i in 0..n {
        let mut covering = layers.iter().filter(|l| l.mask[i]);
        let pick = match mode {
            FusionMode::Priority => covering.next(),
            FusionMode::LowestUncertainty => covering.fold(None, |best: Option<&SensorLayer>, l| match best {
                Some(b) if b.uncertainty[i] <= l.uncertainty[i] => Some(b),
                _ => Some(l),
            }),
        };
        if let Some(l) = pick {
            m.mean[i] = l.mean[i];
            m.uncertainty[i] = l.uncertainty[i];
            m.provenance[i] = Some(l.sensor);
        }
    }
    Ok(m)
}

impl Mosaic {
    pub fn is_valid(&self, i: usize) -> bool {
        self.provenance[i].is_some()
    }

    pub fn valid_count(&self) -> usize {
        self.provenance.iter().filter(|p| p.is_some()).count()
    }

    /// Splits the mosaic back into one layer per contributing sensor, in
    /// priority order. Fusing these layers reproduces the mosaic.
    pub fn as_layers(&self) -> Vec<SensorLayer> {
        Sensor::ALL
            .iter()
            .filter(|s| self.provenance.contains(&Some(**s)))
            .map(|&s| SensorLayer {
                sensor: s,
                height: self.height,
                width: self.width,
                mean: self.mean.clone(),
                uncertainty: self.uncertainty.clone(),
                mask: self.provenance.iter().map(|p| *p == Some(s)).collect(),
            })
            .collect()
    }

    pub fn file_name(&self) -> String {
        let scene = self.scene.map(|s| format!("scene_{s:04}")).unwrap_or_else(|| "mosaic".into());
        let method = self.method.map(|m| format!("_{m}")).unwrap_or_default();
        format!("{scene}{method}.mosaic")
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::default();
        c.meta.insert("content".into(), "mosaic".into());
        if let Some(m) = self.method {
            c.meta.insert("method".into(), m.to_string());
        }
        if let Some(s) = self.scene {
            c.meta.insert("scene".into(), s.to_string());
        }
        let shape = vec![self.height, self.width];
        let prov = self.provenance.iter().map(|p| p.map(|s| s.code() as f32).unwrap_or(NODATA)).collect();
        c.tensors.push(NamedTensor { name: "mean".into(), shape: shape.clone(), data: self.mean.clone() });
        c.tensors.push(NamedTensor { name: "uncertainty".into(), shape: shape.clone(), data: self.uncertainty.clone() });
        c.tensors.push(NamedTensor { name: "provenance".into(), shape, data: prov });
        c
    }

    pub fn from_container(c: &Container, path: &Path) -> Result<Self> {
        let malformed = |detail: &str| Error::Malformed { path: path.to_path_buf(), detail: detail.to_string() };
        if c.meta_get("content") != Some("mosaic") {
            return Err(malformed("not a mosaic"));
        }
        let method = c.meta_get("method").map(str::parse).transpose()?;
        let scene = c.meta_get("scene").map(|v| v.parse().map_err(|_| malformed("scene"))).transpose()?;
        let get = |name: &str| c.tensor(name).ok_or_else(|| malformed(&format!("missing `{name}`")));
        let (mean, unc, prov) = (get("mean")?, get("uncertainty")?, get("provenance")?);
        if mean.shape.len() != 2 || unc.shape != mean.shape || prov.shape != mean.shape {
            return Err(Error::FormatDimension { path: path.to_path_buf(), detail: "mosaic grids differ in shape".into() });
        }
        let provenance = prov
            .data
            .iter()
            .map(|&p| if p == NODATA { Ok(None) } else { Sensor::from_code(p as u8).map(Some).ok_or_else(|| malformed("provenance code")) })
            .collect::<Result<_>>()?;
        Ok(Self {
            height: mean.shape[0],
            width: mean.shape[1],
            mean: mean.data.clone(),
            uncertainty: unc.data.clone(),
            provenance,
            method,
            scene,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::read(path)?, path)
    }
}
