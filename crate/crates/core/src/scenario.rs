//! Declarative media: named analytic coefficient families that build an [`EpsProblem`].

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dynsys::TorusDynamics;
use crate::epsolver::{DensityFn, ElasticityTensor, EpsProblem, ForceFn, InitialVelocity, Modulation, PhaseTensor, StreamFn};
use crate::error::{Error, Result};
use crate::geometry::{BoxDomain, CellDecomposition, Phase, ScaledGeometry};
use crate::tensor::Tensor4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeometrySpec {
    Stripe { k: usize, fraction: f64 },
    Checkerboard { k: usize },
    Inclusion { k: usize, radius: f64 },
    Uniform { k: usize },
    /// `rows[j]` holds the `0`/`1` digits (fissure = 1) of the cells with
    /// `y1` in `[j/K, (j+1)/K)`, ordered along `y2`.
    Raster { rows: Vec<String> },
}

impl GeometrySpec {
    pub fn build(&self) -> Result<CellDecomposition> {
        match self {
            GeometrySpec::Stripe { k, fraction } => CellDecomposition::stripe(2, *k, *fraction),
            GeometrySpec::Checkerboard { k } => CellDecomposition::checkerboard(2, *k),
            GeometrySpec::Inclusion { k, radius } => CellDecomposition::inclusion(2, *k, *radius),
            GeometrySpec::Uniform { k } => CellDecomposition::uniform(2, *k, Phase::Fissure),
            GeometrySpec::Raster { rows } => {
                let digits: Vec<String> = rows.iter().flat_map(|r| r.chars().filter(|c| !c.is_whitespace()).map(String::from)).collect();
                CellDecomposition::parse_raster(2, &format!("{}\n{}", rows.len(), digits.join(" ")))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TensorSpec {
    Isotropic { lambda: f64, mu: f64 },
    Orthotropic { c1111: f64, c2222: f64, c1122: f64, c1212: f64 },
}

impl TensorSpec {
    pub fn build(&self) -> Tensor4 {
        match *self {
            TensorSpec::Isotropic { lambda, mu } => Tensor4::isotropic(lambda, mu),
            TensorSpec::Orthotropic { c1111, c2222, c1122, c1212 } => Tensor4::orthotropic(c1111, c2222, c1122, c1212),
        }
    }
}

/// `mean + amplitude cos(2 pi k . omega)` or the same in `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensitySpec {
    Constant { value: f64 },
    OmegaWave { mean: f64, amplitude: f64, freq: [i64; 2] },
    XWave { mean: f64, amplitude: f64, freq: [i64; 2] },
}

impl DensitySpec {
    pub fn build(&self) -> DensityFn {
        let wave = |k: [i64; 2], z: &[f64]| (2.0 * PI * (k[0] as f64 * z[0] + k[1] as f64 * z[1])).cos();
        match *self {
            DensitySpec::Constant { value } => Arc::new(move |_, _| value),
            DensitySpec::OmegaWave { mean, amplitude, freq } => Arc::new(move |_, w| mean + amplitude * wave(freq, w)),
            DensitySpec::XWave { mean, amplitude, freq } => Arc::new(move |x, _| mean + amplitude * wave(freq, x)),
        }
    }

    /// Lower bound over all arguments.
    pub fn min(&self) -> f64 {
        match *self {
            DensitySpec::Constant { value } => value,
            DensitySpec::OmegaWave { mean, amplitude, .. } | DensitySpec::XWave { mean, amplitude, .. } => mean - amplitude.abs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ForceSpec {
    Zero,
    Constant { value: [f64; 2] },
    /// `c (sin^2(pi x1) sin(2 pi x2), -sin(2 pi x1) sin^2(pi x2))`, divergence-free.
    Vortex { c: f64 },
    /// The vortex scaled by `1 + amplitude cos(2 pi k . omega)`.
    RandomVortex { c: f64, amplitude: f64, freq: [i64; 2] },
}

impl ForceSpec {
    pub fn build(&self) -> ForceFn {
        fn vortex(c: f64, x: &[f64]) -> [f64; 2] {
            let (s1, s2) = ((PI * x[0]).sin(), (PI * x[1]).sin());
            [c * s1 * s1 * (2.0 * PI * x[1]).sin(), -c * (2.0 * PI * x[0]).sin() * s2 * s2]
        }
        match *self {
            ForceSpec::Zero => Arc::new(|_, _, _| [0.0, 0.0]),
            ForceSpec::Constant { value } => Arc::new(move |_, _, _| value),
            ForceSpec::Vortex { c } => Arc::new(move |_, x, _| vortex(c, x)),
            ForceSpec::RandomVortex { c, amplitude, freq } => Arc::new(move |_, x, w| {
                let m = 1.0 + amplitude * (2.0 * PI * (freq[0] as f64 * w[0] + freq[1] as f64 * w[1])).cos();
                vortex(c * m, x)
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSpec {
    Zero,
    /// Stream function `A sin^2(pi x1) sin^2(pi x2)`.
    Vortex { amplitude: f64 },
}

impl InitialSpec {
    pub fn build(&self) -> InitialVelocity {
        match *self {
            InitialSpec::Zero => InitialVelocity::Zero,
            InitialSpec::Vortex { amplitude } => {
                let psi: StreamFn = Arc::new(move |x, _| amplitude * ((PI * x[0]).sin() * (PI * x[1]).sin()).powi(2));
                InitialVelocity::Stream(psi)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseSpec {
    pub tensor: TensorSpec,
    #[serde(default)]
    pub x_modulation: Option<Modulation>,
    #[serde(default)]
    pub omega_modulation: Option<Modulation>,
    #[serde(default)]
    pub y_modulation: Option<Modulation>,
    pub density: DensitySpec,
    pub force: ForceSpec,
}

impl PhaseSpec {
    pub fn tensor(&self) -> PhaseTensor {
        PhaseTensor { base: self.tensor.build(), x: self.x_modulation.clone(), omega: self.omega_modulation.clone(), y: self.y_modulation.clone() }
    }
}

/// A complete two-phase medium on the unit square.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MediumSpec {
    pub geometry: GeometrySpec,
    pub fissure: PhaseSpec,
    pub matrix: PhaseSpec,
    pub initial: InitialSpec,
    pub horizon: f64,
    #[serde(default)]
    pub convection: bool,
    /// Sample grid resolution on the torus.
    pub omega_resolution: usize,
}

impl MediumSpec {
    pub fn tensor(&self) -> Result<ElasticityTensor> {
        ElasticityTensor::new(self.fissure.tensor(), self.matrix.tensor())
    }

    pub fn density_floor(&self) -> f64 {
        self.fissure.density.min().min(self.matrix.density.min())
    }

    pub fn problem(&self, eps: f64) -> Result<EpsProblem> {
        let floor = self.density_floor();
        if !(floor > 0.0) {
            return Err(Error::DensityFloor { min: floor, location: "declared density".into() });
        }
        let cells = Arc::new(self.geometry.build()?);
        let p = EpsProblem {
            geometry: ScaledGeometry::new(eps, BoxDomain::unit(2), cells)?,
            dynamics: TorusDynamics::new(2, self.omega_resolution)?,
            density: [self.fissure.density.build(), self.matrix.density.build()],
            density_floor: floor,
            forcing: [self.fissure.force.build(), self.matrix.force.build()],
            tensor: self.tensor()?,
            initial: self.initial.build(),
            horizon: self.horizon,
            convection: self.convection,
        };
        p.validate()?;
        Ok(p)
    }

    /// Stripes of soft fissures in a stiffer, sample-modulated matrix, driven by a vortex force.
    pub fn default_stripes() -> Self {
        let phase = |mu: f64, omega_modulation: Option<Modulation>| PhaseSpec {
            tensor: TensorSpec::Isotropic { lambda: 0.0, mu },
            x_modulation: None,
            omega_modulation,
            y_modulation: None,
            density: DensitySpec::Constant { value: 1.0 },
            force: ForceSpec::Vortex { c: 10.0 },
        };
        MediumSpec {
            geometry: GeometrySpec::Stripe { k: 8, fraction: 0.5 },
            fissure: phase(1.0, None),
            matrix: phase(4.0, Some(Modulation { amplitude: 0.4, freq: vec![1, 1] })),
            initial: InitialSpec::Zero,
            horizon: 0.25,
            convection: false,
            omega_resolution: 16,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let spec = MediumSpec::default_stripes();
        let text = toml::to_string(&spec).unwrap();
        let back: MediumSpec = toml::from_str(&text).unwrap();
        assert_eq!(back, spec);
        assert!(spec.problem(0.25).is_ok());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = toml::to_string(&MediumSpec::default_stripes()).unwrap().replace("horizon", "horizn");
        assert!(toml::from_str::<MediumSpec>(&text).is_err());
    }

    #[test]
    fn density_floor_and_connectivity_are_enforced() {
        let mut spec = MediumSpec::default_stripes();
        spec.matrix.density = DensitySpec::OmegaWave { mean: 1.0, amplitude: 1.5, freq: [1, 0] };
        assert!(matches!(spec.problem(0.25), Err(Error::DensityFloor { .. })));

        let mut spec = MediumSpec::default_stripes();
        spec.geometry = GeometrySpec::Checkerboard { k: 2 };
        assert!(matches!(spec.problem(0.25), Err(Error::Disconnected)));
    }

    #[test]
    fn vortex_force_is_divergence_free() {
        let f = ForceSpec::Vortex { c: 3.0 }.build();
        let h = 1e-5;
        for x in [[0.2, 0.3], [0.7, 0.55], [0.5, 0.9]] {
            let d1 = (f(0.0, &[x[0] + h, x[1]], &[0.0, 0.0])[0] - f(0.0, &[x[0] - h, x[1]], &[0.0, 0.0])[0]) / (2.0 * h);
            let d2 = (f(0.0, &[x[0], x[1] + h], &[0.0, 0.0])[1] - f(0.0, &[x[0], x[1] - h], &[0.0, 0.0])[1]) / (2.0 * h);
            assert!((d1 + d2).abs() < 1e-7);
        }
        let r = ForceSpec::RandomVortex { c: 3.0, amplitude: 0.5, freq: [1, 0] }.build();
        assert!((r(0.0, &[0.2, 0.3], &[0.0, 0.0])[0] - 1.5 * f(0.0, &[0.2, 0.3], &[0.0, 0.0])[0]).abs() < 1e-12);
    }

    #[test]
    fn raster_geometry_parses() {
        let g = GeometrySpec::Raster { rows: vec!["1100".into(), "1100".into(), "1100".into(), "1100".into()] };
        let cells = g.build().unwrap();
        assert_eq!(cells.k(), 4);
        assert_eq!(cells.volume_fraction(Phase::Fissure), 0.5);
    }
}
