use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backbone::BackboneConfig;
use crate::error::{Error, Result};
use crate::geometry::Region;
use crate::pepfe::{ChannelSelection, PyramidSpec};
use crate::pillar::{GridSpec, PFE_CHANNELS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TrackerKind {
    #[default]
    Centroid,
    Network,
}

/// Search and template crops as `[x_min, y_min, z_min, x_max, y_max, z_max]`
/// in the target's local frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Regions {
    pub search: [f64; 6],
    pub template: [f64; 6],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub search: [f64; 6],
    pub template: [f64; 6],
    pub pillar_size: [f64; 2],
    pub max_points_per_pillar: usize,
    pub max_pillars: usize,
    /// Divisor applied to raw `.bin` reflectance (1 for KITTI, 255 for 8-bit sensors).
    pub reflectance_max: f64,
    /// Per-category crop overrides, keyed by category name.
    pub categories: BTreeMap<String, Regions>,
}

fn region_array(r: Region) -> [f64; 6] {
    [r.min[0], r.min[1], r.min[2], r.max[0], r.max[1], r.max[2]]
}

impl Default for GridSection {
    fn default() -> Self {
        let g = GridSpec::search_default();
        Self {
            search: region_array(Region::search_default()),
            template: region_array(Region::template_default()),
            pillar_size: [g.pillar_size.0, g.pillar_size.1],
            max_points_per_pillar: g.max_points_per_pillar,
            max_pillars: g.max_pillars,
            reflectance_max: 1.0,
            categories: BTreeMap::new(),
        }
    }
}

impl GridSection {
    fn grid(&self, region: [f64; 6]) -> Result<GridSpec> {
        let mut g = GridSpec::from_region(
            &Region::from_array(region)?,
            (self.pillar_size[0], self.pillar_size[1]),
        );
        g.max_points_per_pillar = self.max_points_per_pillar;
        g.max_pillars = self.max_pillars;
        g.validate()?;
        Ok(g)
    }

    /// Search and template grids for `category`.
    pub fn grids(&self, category: &str) -> Result<(GridSpec, GridSpec)> {
        let r = self.categories.get(category).copied().unwrap_or(Regions {
            search: self.search,
            template: self.template,
        });
        Ok((self.grid(r.search)?, self.grid(r.template)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerSection {
    pub kind: TrackerKind,
    /// Weight file for the network tracker; seeded init when absent.
    pub weights: Option<PathBuf>,
    pub seed: u64,
    pub confidence_floor: f64,
}

impl Default for TrackerSection {
    fn default() -> Self {
        Self {
            kind: TrackerKind::Centroid,
            weights: None,
            seed: 0,
            confidence_floor: 0.1,
        }
    }
}

/// Run configuration file with `[grid]`, `[pyramid]`, `[backbone]` and
/// `[tracker]` tables. Every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridSection,
    pub pyramid: PyramidSpec,
    pub backbone: BackboneConfig,
    pub tracker: TrackerSection,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if !(cfg.grid.reflectance_max > 0.0 && cfg.grid.reflectance_max.is_finite()) {
            return Err(Error::Config(format!(
                "reflectance_max {} must be positive",
                cfg.grid.reflectance_max
            )));
        }
        Ok(cfg)
    }

    /// Loads a config; relative weight paths resolve against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::FileNotFound(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        let mut cfg = Self::parse(&text)?;
        if let (Some(w), Some(dir)) = (&cfg.tracker.weights, path.parent()) {
            if w.is_relative() {
                cfg.tracker.weights = Some(dir.join(w));
            }
        }
        Ok(cfg)
    }

    pub fn tracker_spec(&self, category: &str) -> Result<TrackerSpec> {
        let (search, template) = self.grid.grids(category)?;
        let spec = TrackerSpec {
            kind: self.tracker.kind,
            backbone: self.backbone.clone(),
            weights: self.tracker.weights.clone(),
            seed: self.tracker.seed,
            confidence_floor: self.tracker.confidence_floor,
            search,
            template,
            pyramid: self.pyramid,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerSpec {
    pub kind: TrackerKind,
    pub backbone: BackboneConfig,
    pub weights: Option<PathBuf>,
    pub seed: u64,
    pub confidence_floor: f64,
    pub search: GridSpec,
    pub template: GridSpec,
    pub pyramid: PyramidSpec,
}

impl Default for TrackerSpec {
    fn default() -> Self {
        Self {
            kind: TrackerKind::Centroid,
            backbone: BackboneConfig::default(),
            weights: None,
            seed: 0,
            confidence_floor: 0.1,
            search: GridSpec::search_default(),
            template: GridSpec::template_default(),
            pyramid: PyramidSpec::default(),
        }
    }
}

impl TrackerSpec {
    pub fn network(seed: u64) -> Self {
        Self {
            kind: TrackerKind::Network,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.search.validate()?;
        self.template.validate()?;
        self.pyramid.validate()?;
        if !(0.0..=1.0).contains(&self.confidence_floor) {
            return Err(Error::Config(format!(
                "confidence floor {} outside [0, 1]",
                self.confidence_floor
            )));
        }
        if self.kind == TrackerKind::Network {
            self.backbone.validate()?;
            let width = ChannelSelection::default().output_width(PFE_CHANNELS, &self.pyramid);
            if width != self.backbone.in_channels {
                return Err(Error::Config(format!(
                    "pyramid produces {width} channels but backbone expects {}",
                    self.backbone.in_channels
                )));
            }
            for g in [&self.search, &self.template] {
                self.backbone.check_input(g.height(), g.width())?;
            }
        }
        Ok(())
    }
}
