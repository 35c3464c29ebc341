use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fem::Material;

/// Preset resolution: `Desk` runs in minutes, `Full` matches the original
/// frame count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Desk,
    Full,
}

impl FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Scale::Desk),
            "full" => Ok(Scale::Full),
            other => Err(Error::Config(format!(
                "unknown scale {other:?}, expected desk or full"
            ))),
        }
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scale::Desk => "desk",
            Scale::Full => "full",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ShapeSpec {
    Rectangle {
        width: f64,
        height: f64,
    },
    /// L-shape on a unit square; see [`crate::mesh::lshape_polygon`].
    Lshape {
        a: f64,
        b: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeshSpec {
    /// Structured grid with `nx x ny` nodes; rectangles only.
    Regular { nx: usize, ny: usize },
    /// Delaunay mesh with target edge length `h` (m).
    Irregular { h: f64 },
    /// The parent is simulated; a `fraction` node subset reconnected by
    /// Delaunay triangulation carries the parent's values at kept nodes.
    Submesh {
        parent: Box<MeshSpec>,
        fraction: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LoadSpec {
    /// `power` (W m^-3) on the top boundary for `x <= xmin + fraction * width`.
    BoundaryStrip { fraction: f64, power: f64 },
    /// One design per sampled center node. The first `n_train` centers are
    /// training designs, the next `n_eval` evaluation designs.
    Gaussian {
        p_max: f64,
        sigma_fraction: f64,
        min_separation_fraction: f64,
        n_train: usize,
        n_eval: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeDesign {
    pub shape: ShapeSpec,
    pub role: Role,
}

/// Declarative description of one dataset family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub name: String,
    pub shapes: Vec<ShapeDesign>,
    pub mesh: MeshSpec,
    pub load: LoadSpec,
    /// Time steps; series carry `n_steps + 1` frames.
    pub n_steps: usize,
    pub dt: f64,
    pub material: Material,
    /// Seeds mesh jitter, submesh sampling and Gaussian-center placement.
    pub seed: u64,
}

const fn material(rho_cp: f64, k0: f64) -> Material {
    Material {
        rho_cp,
        k0,
        beta: 1.2e-3,
        t0: 298.0,
    }
}

/// Calibrated material of the A-series presets: the final-frame max node
/// relative gap of every A preset lies in [10%, 25%]. The boundary strip is
/// one element thick, so the finer full-scale meshes need their own values.
pub fn a_series_material(scale: Scale) -> Material {
    match scale {
        Scale::Desk => material(40.0, 0.4),
        Scale::Full => material(25.0, 0.25),
    }
}

/// Calibrated material of the Gaussian-load presets (gaps of 10% to 19%
/// depending on the center).
pub fn b1_material(_scale: Scale) -> Material {
    material(0.2, 0.002)
}

/// Calibrated material of the L-shape presets (gaps of 10% to 18%).
pub fn b2_material(scale: Scale) -> Material {
    match scale {
        Scale::Desk => material(20.0, 0.15),
        Scale::Full => material(15.0, 0.1),
    }
}

pub const A_SERIES_POWER: f64 = 15000.0;
pub const B1_P_MAX: f64 = 60.0;
pub const B2_POWER: f64 = 6000.0;
pub const GAUSSIAN_SIGMA_FRACTION: f64 = 0.15;
pub const GAUSSIAN_MIN_SEPARATION_FRACTION: f64 = 0.1;
pub const SUBMESH_FRACTION: f64 = 0.4;
pub const PRESET_NAMES: [&str; 10] = ["A1", "A2", "A3", "A4", "A5", "A6", "A7", "A8", "B1", "B2"];

/// Training and evaluation L-shapes `(a, b)` of the B2 family.
pub const B2_TRAIN_SHAPES: [(f64, f64); 4] = [(0.4, 0.4), (0.6, 0.6), (1.0, 1.0), (1.2, 1.2)];
pub const B2_EVAL_SHAPES: [(f64, f64); 4] = [(0.8, 0.8), (0.5, 0.5), (0.4, 1.2), (1.0, 0.4)];

fn unit_square() -> Vec<ShapeDesign> {
    vec![ShapeDesign {
        shape: ShapeSpec::Rectangle {
            width: 1.0,
            height: 1.0,
        },
        role: Role::Train,
    }]
}

impl DatasetConfig {
    /// Named preset. Every preset spans 10 s of simulated time.
    pub fn preset(name: &str, scale: Scale) -> Result<Self> {
        let desk = scale == Scale::Desk;
        let (n_steps, dt) = if desk { (400, 2.5e-2) } else { (4000, 2.5e-3) };
        let regular = if desk {
            MeshSpec::Regular { nx: 15, ny: 15 }
        } else {
            MeshSpec::Regular { nx: 30, ny: 30 }
        };
        let coarse = MeshSpec::Irregular {
            h: if desk { 1.0 / 14.0 } else { 0.05 },
        };
        let fine = MeshSpec::Irregular {
            h: if desk { 0.05 } else { 0.035 },
        };
        let strip = |fraction| LoadSpec::BoundaryStrip {
            fraction,
            power: A_SERIES_POWER,
        };
        let a_series = |mesh: MeshSpec, fraction: f64| DatasetConfig {
            name: name.to_string(),
            shapes: unit_square(),
            mesh,
            load: strip(fraction),
            n_steps,
            dt,
            material: a_series_material(scale),
            seed: 0,
        };
        let submesh = |parent: MeshSpec| MeshSpec::Submesh {
            parent: Box::new(parent),
            fraction: SUBMESH_FRACTION,
        };
        Ok(match name {
            "A1" => a_series(regular, 0.5),
            "A2" => a_series(regular, 1.0),
            "A3" => a_series(coarse, 0.5),
            "A4" => a_series(coarse, 1.0),
            "A5" => a_series(fine, 0.5),
            "A6" => a_series(fine, 1.0),
            "A7" => a_series(submesh(fine), 0.5),
            "A8" => a_series(submesh(fine), 1.0),
            "B1" => DatasetConfig {
                name: name.to_string(),
                shapes: unit_square(),
                mesh: regular,
                load: LoadSpec::Gaussian {
                    p_max: B1_P_MAX,
                    sigma_fraction: GAUSSIAN_SIGMA_FRACTION,
                    min_separation_fraction: GAUSSIAN_MIN_SEPARATION_FRACTION,
                    n_train: if desk { 10 } else { 40 },
                    n_eval: if desk { 3 } else { 10 },
                },
                n_steps: 200,
                dt: 5e-2,
                material: b1_material(scale),
                seed: 0,
            },
            "B2" => DatasetConfig {
                name: name.to_string(),
                shapes: B2_TRAIN_SHAPES
                    .iter()
                    .map(|&s| (s, Role::Train))
                    .chain(B2_EVAL_SHAPES.iter().map(|&s| (s, Role::Eval)))
                    .map(|((a, b), role)| ShapeDesign {
                        shape: ShapeSpec::Lshape { a, b },
                        role,
                    })
                    .collect(),
                mesh: coarse,
                load: LoadSpec::BoundaryStrip {
                    fraction: 1.0,
                    power: B2_POWER,
                },
                n_steps,
                dt,
                material: b2_material(scale),
                seed: 0,
            },
            other => {
                return Err(Error::Config(format!(
                    "unknown preset {other:?}; expected one of {}",
                    PRESET_NAMES.join(", ")
                )))
            }
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("dataset {}: {msg}", self.name)));
        if self.name.is_empty()
            || !self
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        {
            return bad("name must be non-empty ASCII alphanumerics, '-' or '_'".into());
        }
        if self.shapes.is_empty() {
            return bad("no shapes".into());
        }
        if self.n_steps == 0 || !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("invalid time grid {} x {}", self.n_steps, self.dt));
        }
        self.material.validate()?;
        for s in &self.shapes {
            match (&s.shape, &self.mesh) {
                (ShapeSpec::Lshape { .. }, MeshSpec::Regular { .. }) => {
                    return bad("regular grids only mesh rectangles".into());
                }
                (ShapeSpec::Rectangle { width, height }, _) if !(*width > 0.0 && *height > 0.0) => {
                    return bad("rectangle extents must be positive".into());
                }
                _ => {}
            }
        }
        match &self.load {
            LoadSpec::BoundaryStrip { fraction, power } => {
                if !(*fraction > 0.0 && *fraction <= 1.0) || !(*power >= 0.0 && power.is_finite()) {
                    return bad("invalid boundary strip".into());
                }
            }
            LoadSpec::Gaussian {
                p_max,
                sigma_fraction,
                min_separation_fraction,
                n_train,
                n_eval,
            } => {
                if !(*p_max >= 0.0)
                    || !(*sigma_fraction > 0.0)
                    || !(*min_separation_fraction >= 0.0)
                {
                    return bad("invalid Gaussian load".into());
                }
                if n_train + n_eval == 0 {
                    return bad("Gaussian load with no centers".into());
                }
                if self.shapes.len() != 1 {
                    return bad("Gaussian loads need exactly one shape".into());
                }
            }
        }
        if let MeshSpec::Submesh { parent, fraction } = &self.mesh {
            if matches!(**parent, MeshSpec::Submesh { .. })
                || !(*fraction > 0.0 && *fraction <= 1.0)
            {
                return bad("invalid submesh".into());
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_json()?.as_bytes())))
    }
}
