//! Chan-Vese active contour on a binary volume.
//!
//! The level set `phi` is negative inside the contour. Internally the
//! evolution works in voxel units; snapshots are returned in world units.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::mesh::Vec3;
use crate::voxel::{propagate_distance_band, BinaryVolume, GridGeometry, ScalarGrid};

/// Smoothed Heaviside, close to 1 inside (`phi < -eps`) and 0 outside.
pub fn heaviside(phi: f64, eps: f64) -> f64 {
    if phi < -eps {
        1.0
    } else if phi > eps {
        0.0
    } else {
        0.5 * (1.0 - phi / eps - (PI * phi / eps).sin() / PI)
    }
}

/// Magnitude of the derivative of [`heaviside`].
pub fn dirac(phi: f64, eps: f64) -> f64 {
    if phi.abs() >= eps {
        0.0
    } else {
        (1.0 + (PI * phi / eps).cos()) / (2.0 * eps)
    }
}

/// Where the initial contour comes from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Initialization {
    /// Sphere around the bounding box of the occupied voxels, dilated by
    /// `margin` voxels.
    BoundingSphere { margin: f64 },
    /// Ball of `radius` (world units) at `center`.
    Seed { center: Vec3, radius: f64 },
    /// The zero level set of a field passed alongside (world units).
    Field,
}

#[derive(Debug, Clone)]
pub struct ChanVeseOptions {
    pub max_steps: usize,
    /// Heaviside width, in voxels.
    pub eps: f64,
    /// Time step, in voxel units.
    pub dt: f64,
    pub reinit_every: usize,
    /// Consecutive non-improving steps tolerated before giving up.
    pub patience: usize,
    /// Extra steps after the contour matches the target, without
    /// reinitialization, to push the band off the interface.
    pub polish_steps: usize,
    /// Steps whose level set should be kept as snapshots (sorted).
    pub keep: Vec<usize>,
}

impl Default for ChanVeseOptions {
    fn default() -> Self {
        Self {
            max_steps: 4000,
            eps: 1.5,
            dt: 0.75,
            reinit_every: 20,
            patience: 50,
            polish_steps: 200,
            keep: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub energy_before: f64,
    pub energy_after: f64,
    /// Occupied volume `{phi < 0}` after the step, in voxels.
    pub inside_voxels: usize,
    pub reinitialized: bool,
}

#[derive(Debug, Clone)]
pub struct Snapshot {
    pub step: usize,
    pub phi: ScalarGrid,
    pub inside_voxels: usize,
}

#[derive(Debug, Clone)]
pub struct EvolutionTrace {
    pub snapshots: Vec<Snapshot>,
    /// Steps until `{phi < 0}` first equals the target.
    pub steps_to_convergence: usize,
    /// Inside volume (voxels) of the initial contour.
    pub initial_inside_voxels: usize,
    pub history: Vec<StepRecord>,
    /// Final level set (after polishing), world units.
    pub final_phi: ScalarGrid,
    pub mu_in: f64,
    pub mu_out: f64,
}

impl EvolutionTrace {
    /// Inside volume after `step` steps (step 0 is the initial contour).
    pub fn inside_at(&self, step: usize) -> usize {
        if step == 0 {
            self.initial_inside_voxels
        } else {
            self.history[step - 1].inside_voxels
        }
    }
}

/// Running sums that determine the energy: `sum H`, `sum beta H` and the totals.
#[derive(Debug, Clone, Copy)]
struct Sums {
    h: f64,
    bh: f64,
    n: f64,
    b: f64,
}

impl Sums {
    fn of(phi: &[f64], beta: &[bool], eps: f64) -> Self {
        let mut s = Sums {
            h: 0.0,
            bh: 0.0,
            n: phi.len() as f64,
            b: 0.0,
        };
        for (&p, &b) in phi.iter().zip(beta) {
            let h = heaviside(p, eps);
            s.h += h;
            if b {
                s.bh += h;
                s.b += 1.0;
            }
        }
        s
    }

    fn means(&self) -> Result<(f64, f64)> {
        let out = self.n - self.h;
        if self.h <= 1e-9 || out <= 1e-9 {
            return Err(Error::EmptyInterface(format!(
                "inside weight {:.3e}, outside weight {:.3e}",
                self.h, out
            )));
        }
        Ok((self.bh / self.h, (self.b - self.bh) / out))
    }

    /// `sum (beta - mu_in)^2 H + (beta - mu_out)^2 (1 - H)` with optimal means.
    fn energy(&self) -> Result<f64> {
        self.means()?;
        let out = self.n - self.h;
        let bout = self.b - self.bh;
        Ok((self.bh - self.bh * self.bh / self.h) + (bout - bout * bout / out))
    }
}

fn initial_phi(beta: &BinaryVolume, init: &Initialization, field: Option<&ScalarGrid>) -> Result<Vec<f64>> {
    let g = beta.geom;
    let h = g.spacing;
    Ok(match *init {
        Initialization::BoundingSphere { margin } => {
            let mut lo = Vec3::repeat(f64::INFINITY);
            let mut hi = Vec3::repeat(f64::NEG_INFINITY);
            for idx in (0..g.len()).filter(|&i| beta.occupancy[i]) {
                let c = g.center_of(idx);
                lo = lo.inf(&c);
                hi = hi.sup(&c);
            }
            if !lo.x.is_finite() {
                return Err(Error::EmptyVolume);
            }
            let center = (lo + hi) / 2.0;
            let radius = (hi - lo).norm() / 2.0 + margin * h;
            (0..g.len()).map(|i| ((g.center_of(i) - center).norm() - radius) / h).collect()
        }
        Initialization::Seed { center, radius } => {
            (0..g.len()).map(|i| ((g.center_of(i) - center).norm() - radius) / h).collect()
        }
        Initialization::Field => {
            let f = field.ok_or_else(|| Error::Config("initial field missing".into()))?;
            f.values.iter().map(|v| v / h).collect()
        }
    })
}

/// Recomputes `phi` (voxel units) as the distance to its zero level set,
/// exact within `width` voxels and clamped to `+-width` beyond.
pub fn reinitialize(geom: &GridGeometry, phi: &[f64], width: f64) -> Vec<f64> {
    let unit = GridGeometry {
        dims: geom.dims,
        origin: Vec3::zeros(),
        spacing: 1.0,
    };
    let mut seeds: Vec<Option<Vec3>> = vec![None; phi.len()];
    for idx in 0..phi.len() {
        let x = unit.center_of(idx);
        let mut best: Option<(f64, Vec3)> = None;
        for n in unit.neighbors6(idx) {
            let (a, b) = (phi[idx], phi[n]);
            if (a < 0.0) != (b < 0.0) {
                let t = a / (a - b);
                let p = x + (unit.center_of(n) - x) * t;
                let d = (p - x).norm_squared();
                if best.map_or(true, |(bd, _)| d < bd) {
                    best = Some((d, p));
                }
            }
        }
        seeds[idx] = best.map(|(_, p)| p);
    }
    let dist = propagate_distance_band(&unit, seeds, width);
    phi.iter()
        .zip(&dist)
        .map(|(&p, &d)| {
            let d = d.min(width);
            if p < 0.0 {
                -d
            } else {
                d
            }
        })
        .collect()
}

/// Runs the contour on `beta` until `{phi < 0}` equals the occupied set.
///
/// Each gradient step is accepted only if it does not raise the energy; a
/// rejected step is retried with half the time step. `field` supplies the
/// initial level set for [`Initialization::Field`].
pub fn evolve_chan_vese(
    beta: &BinaryVolume,
    init: &Initialization,
    field: Option<&ScalarGrid>,
    opts: &ChanVeseOptions,
) -> Result<EvolutionTrace> {
    if beta.count() == 0 {
        return Err(Error::EmptyVolume);
    }
    let geom = beta.geom;
    let target = &beta.occupancy;
    let eps = opts.eps;
    let band_width = eps + 2.0;
    let mut phi = reinitialize(&geom, &initial_phi(beta, init, field)?, band_width);
    let mut sums = Sums::of(&phi, target, eps);
    let mut energy = sums.energy()?;

    let to_grid = |phi: &[f64]| ScalarGrid {
        geom,
        values: phi.iter().map(|v| v * geom.spacing).collect(),
    };
    let inside = |phi: &[f64]| phi.iter().filter(|&&p| p < 0.0).count();
    let mismatch_of = |phi: &[f64]| phi.iter().zip(target).filter(|(&p, &b)| (p < 0.0) != b).count();

    let initial_inside = inside(&phi);
    let mut snapshots = Vec::new();
    let mut keep = opts.keep.iter().copied().peekable();
    while keep.peek() == Some(&0) {
        snapshots.push(Snapshot {
            step: 0,
            phi: to_grid(&phi),
            inside_voxels: initial_inside,
        });
        keep.next();
    }

    let band = |phi: &[f64]| -> Vec<usize> { (0..phi.len()).filter(|&i| phi[i].abs() < eps).collect() };
    let mut active = band(&phi);
    let mut history = Vec::new();
    let mut converged: Option<usize> = None;
    let mut stall = 0;
    let mut inside_now = initial_inside;
    let mut polish = 0;
    let mut mismatched = mismatch_of(&phi);

    for step in 1..=opts.max_steps {
        if converged.is_none() && mismatched == 0 {
            converged = Some(step - 1);
        }
        if converged.is_some() {
            let (mi, mo) = sums.means()?;
            if polish >= opts.polish_steps || (mi >= 0.999 && mo <= 0.001) {
                break;
            }
            polish += 1;
        }
        let (mu_in, mu_out) = sums.means()?;
        let force: Vec<f64> = active
            .iter()
            .map(|&i| {
                let b = if target[i] { 1.0 } else { 0.0 };
                dirac(phi[i], eps) * ((b - mu_in).powi(2) - (b - mu_out).powi(2))
            })
            .collect();

        let mut dt = opts.dt;
        let mut accepted = None;
        for _ in 0..10 {
            let mut trial = sums;
            let mut updated = Vec::with_capacity(active.len());
            for (&i, f) in active.iter().zip(&force) {
                let old = heaviside(phi[i], eps);
                let p = phi[i] + dt * f;
                let new = heaviside(p, eps);
                trial.h += new - old;
                if target[i] {
                    trial.bh += new - old;
                }
                updated.push(p);
            }
            let e = trial.energy()?;
            if e <= energy {
                accepted = Some((trial, updated, e));
                break;
            }
            dt *= 0.5;
        }

        let before = energy;
        match accepted {
            Some((trial, updated, e)) => {
                for (&i, p) in active.iter().zip(updated) {
                    if (p < 0.0) != (phi[i] < 0.0) {
                        if p < 0.0 {
                            inside_now += 1;
                        } else {
                            inside_now -= 1;
                        }
                        if (p < 0.0) == target[i] {
                            mismatched -= 1;
                        } else {
                            mismatched += 1;
                        }
                    }
                    phi[i] = p;
                }
                stall = if e < before * (1.0 - 1e-12) { 0 } else { stall + 1 };
                sums = trial;
                energy = e;
            }
            None => stall += 1,
        }
        if stall >= opts.patience && converged.is_none() {
            return Err(Error::NoConvergence { steps: step });
        }

        let after = energy;
        let reinit = converged.is_none() && step % opts.reinit_every == 0;
        if reinit {
            phi = reinitialize(&geom, &phi, band_width);
            sums = Sums::of(&phi, target, eps);
            energy = sums.energy()?;
            active = band(&phi);
        }
        history.push(StepRecord {
            energy_before: before,
            energy_after: after,
            inside_voxels: inside_now,
            reinitialized: reinit,
        });
        while keep.peek() == Some(&step) {
            snapshots.push(Snapshot {
                step,
                phi: to_grid(&phi),
                inside_voxels: inside_now,
            });
            keep.next();
        }
    }
    if converged.is_none() && mismatched == 0 {
        converged = Some(history.len());
    }
    let steps_to_convergence = converged.ok_or(Error::NoConvergence {
        steps: opts.max_steps,
    })?;
    let (mu_in, mu_out) = sums.means()?;
    Ok(EvolutionTrace {
        snapshots,
        steps_to_convergence,
        initial_inside_voxels: initial_inside,
        history,
        final_phi: to_grid(&phi),
        mu_in,
        mu_out,
    })
}
