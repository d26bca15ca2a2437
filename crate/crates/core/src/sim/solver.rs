//! Newton equilibrium solve for the guided, clamped needle.
//!
//! Unknowns are `[y_0, θ_0, y_1, θ_1, …]`. The base pair is pinned to the
//! clamp pose, the guide imposes one linear constraint handled through a
//! Schur complement on the banded factor, and the feedback projection can
//! pin the tip deflection.

use super::banded::SymBand;
use super::{hermite, ogden, SimConfig, SimState, Simulator, PA_TO_N_PER_MM2};
use crate::error::SimError;

const HALF_BANDWIDTH: usize = 3;
const FEASIBILITY_TOL: f64 = 1e-9;

pub(super) fn assemble_beam(config: &SimConfig) -> SymBand {
    let n = config.n_nodes;
    let l = config.element_length;
    let ei = config.bending_stiffness();
    let mut k = SymBand::zeros(2 * n, HALF_BANDWIDTH);
    let c = ei / (l * l * l);
    let ke = [
        [12.0, 6.0 * l, -12.0, 6.0 * l],
        [6.0 * l, 4.0 * l * l, -6.0 * l, 2.0 * l * l],
        [-12.0, -6.0 * l, 12.0, -6.0 * l],
        [6.0 * l, 2.0 * l * l, -6.0 * l, 4.0 * l * l],
    ];
    for e in 0..n - 1 {
        let base = 2 * e;
        for i in 0..4 {
            for j in i..4 {
                k.add(base + i, base + j, c * ke[i][j]);
            }
        }
    }
    k
}

/// Contact station mapped onto the element it currently touches.
struct Spring {
    dof: usize,
    shape: [f64; 4],
    anchor: f64,
    /// `h_c · t² · w` scale in front of the density.
    scale: f64,
    mu: f64,
    alpha: f64,
}

struct Problem<'a> {
    sim: &'a Simulator,
    springs: Vec<Spring>,
    tip_force: f64,
    tip_dof: usize,
    pinned: Vec<(usize, f64)>,
    /// Guide row restricted to free dofs, with its effective right-hand side.
    guide: Option<(Vec<(usize, f64)>, f64)>,
}

pub(super) struct Solution {
    pub state: SimState,
    pub tip_reaction: f64,
}

impl<'a> Problem<'a> {
    fn new(sim: &'a Simulator, state: &SimState, tip_pin: Option<f64>) -> Self {
        let c = sim.config();
        let n = c.n_nodes;
        let t = c.t_char;
        let springs = state
            .contacts
            .iter()
            .map(|cp| {
                let (e, xi) = sim.locate(state, cp.station_x);
                let (shape, _) = hermite(xi, c.element_length);
                let layer = &c.layers[cp.layer_id];
                Spring {
                    dof: 2 * e,
                    shape,
                    anchor: cp.anchor_y,
                    scale: c.contact_spacing * t * t * cp.weight,
                    mu: layer.mu * PA_TO_N_PER_MM2,
                    alpha: layer.alpha,
                }
            })
            .collect();
        let tip_dof = 2 * (n - 1);
        let mut pinned = vec![(0, state.base_y), (1, state.base_theta)];
        if let Some(y) = tip_pin {
            pinned.push((tip_dof, y));
        }
        let guide = if sim.guide_active(state) {
            let (e, xi) = sim.locate(state, c.guide_x);
            let (shape, _) = hermite(xi, c.element_length);
            let mut rhs = state.guide_y;
            let mut row = Vec::with_capacity(4);
            for (k, &v) in shape.iter().enumerate() {
                let dof = 2 * e + k;
                if let Some(&(_, val)) = pinned.iter().find(|(p, _)| *p == dof) {
                    rhs -= v * val;
                } else if v != 0.0 {
                    row.push((dof, v));
                }
            }
            (!row.is_empty()).then_some((row, rhs))
        } else {
            None
        };
        let tip_force = state.bevel_load + state.tip_load;
        Self {
            sim,
            springs,
            tip_force,
            tip_dof,
            pinned,
            guide,
        }
    }

    fn t_char(&self) -> f64 {
        self.sim.config().t_char
    }

    fn deflection(&self, s: &Spring, u: &[f64]) -> f64 {
        s.shape
            .iter()
            .enumerate()
            .map(|(k, n)| n * u[s.dof + k])
            .sum::<f64>()
            - s.anchor
    }

    fn in_domain(&self, u: &[f64]) -> bool {
        let t = self.t_char();
        self.springs.iter().all(|s| self.deflection(s, u).abs() < t)
    }

    /// Total potential energy and a magnitude scale for round-off slack.
    fn energy(&self, u: &[f64], scratch: &mut [f64]) -> (f64, f64) {
        self.sim.beam.mul_vec(u, scratch);
        let strain: f64 = 0.5 * u.iter().zip(scratch.iter()).map(|(a, b)| a * b).sum::<f64>();
        let t = self.t_char();
        let mut contact = 0.0;
        for s in &self.springs {
            let d = self.deflection(s, u);
            let lam = ogden::stretch_from_deflection(d, t);
            contact += s.scale * ogden::energy_density(s.mu, s.alpha, lam);
        }
        let work = self.tip_force * u[self.tip_dof];
        (strain + contact - work, strain.abs() + contact.abs() + work.abs())
    }

    /// Gradient of the potential and, optionally, the tangent stiffness.
    fn gradient(&self, u: &[f64], grad: &mut [f64], tangent: Option<&mut SymBand>) {
        self.sim.beam.mul_vec(u, grad);
        let t = self.t_char();
        let mut tangent = tangent;
        if let Some(h) = tangent.as_deref_mut() {
            h.copy_from(&self.sim.beam);
        }
        for s in &self.springs {
            let d = self.deflection(s, u);
            let lam = ogden::stretch_from_deflection(d, t);
            // h_c * dE/dd with E = t² w W(λ(d))
            let de = -s.scale / t * d.signum() * ogden::energy_density_slope(s.mu, s.alpha, lam);
            for k in 0..4 {
                grad[s.dof + k] += de * s.shape[k];
            }
            if let Some(h) = tangent.as_deref_mut() {
                let kc = s.scale / (t * t) * ogden::energy_density_curvature(s.mu, s.alpha, lam);
                for i in 0..4 {
                    for j in i..4 {
                        h.add(s.dof + i, s.dof + j, kc * s.shape[i] * s.shape[j]);
                    }
                }
            }
        }
        grad[self.tip_dof] -= self.tip_force;
    }

    fn guide_value(&self, u: &[f64]) -> Option<f64> {
        self.guide
            .as_ref()
            .map(|(row, rhs)| row.iter().map(|&(d, v)| v * u[d]).sum::<f64>() - rhs)
    }

    /// Out-of-balance norm over free dofs after removing the component the
    /// guide reaction can absorb. Also returns that least-squares multiplier.
    fn residual(&self, grad: &[f64]) -> (f64, f64) {
        let mut r: Vec<f64> = grad.to_vec();
        for &(p, _) in &self.pinned {
            r[p] = 0.0;
        }
        let mut lambda = 0.0;
        if let Some((row, _)) = &self.guide {
            let cc: f64 = row.iter().map(|&(_, v)| v * v).sum();
            let cg: f64 = row.iter().map(|&(d, v)| v * r[d]).sum();
            lambda = -cg / cc;
            for &(d, v) in row {
                r[d] += lambda * v;
            }
        }
        (r.iter().map(|v| v * v).sum::<f64>().sqrt(), lambda)
    }
}

pub(super) fn solve(
    sim: &Simulator,
    state: &SimState,
    tip_pin: Option<f64>,
) -> Result<Solution, SimError> {
    let c = sim.config();
    let n = c.n_nodes;
    let ndof = 2 * n;
    let prob = Problem::new(sim, state, tip_pin);

    let mut u = vec![0.0; ndof];
    for (i, node) in state.needle.nodes.iter().enumerate() {
        u[2 * i] = node.y;
        u[2 * i + 1] = node.theta;
    }
    for &(p, v) in &prob.pinned {
        u[p] = v;
    }

    let mut grad = vec![0.0; ndof];
    let mut scratch = vec![0.0; ndof];
    let mut tangent = SymBand::zeros(ndof, HALF_BANDWIDTH);
    let mut trial = vec![0.0; ndof];
    let mut residual = f64::INFINITY;

    if !prob.in_domain(&u) {
        // Start from the anchors' side: pull offending points back to rest.
        return Err(SimError::Domain {
            deflection: prob
                .springs
                .iter()
                .map(|s| prob.deflection(s, &u))
                .fold(0.0, |a: f64, d| if d.abs() > a.abs() { d } else { a }),
            t_char: c.t_char,
        });
    }

    for iter in 0..c.solver.max_newton_iters {
        prob.gradient(&u, &mut grad, Some(&mut tangent));
        let (res, _) = prob.residual(&grad);
        residual = res;
        let violation = prob.guide_value(&u).map_or(0.0, f64::abs);
        if res <= c.solver.tolerance && violation <= FEASIBILITY_TOL {
            return Ok(finish(&prob, state, &u, &grad));
        }

        for &(p, _) in &prob.pinned {
            tangent.pin(p);
        }
        if !tangent.cholesky_in_place() {
            return Err(SimError::NonConvergence {
                iterations: iter,
                residual,
            });
        }
        let mut step: Vec<f64> = grad.iter().map(|g| -g).collect();
        for &(p, _) in &prob.pinned {
            step[p] = 0.0;
        }
        tangent.cholesky_solve(&mut step);
        if let Some((row, rhs)) = &prob.guide {
            let mut b = vec![0.0; ndof];
            for &(d, v) in row {
                b[d] = v;
            }
            tangent.cholesky_solve(&mut b);
            let cu: f64 = row.iter().map(|&(d, v)| v * u[d]).sum();
            let ca: f64 = row.iter().map(|&(d, v)| v * step[d]).sum();
            let cb: f64 = row.iter().map(|&(d, v)| v * b[d]).sum();
            let mult = (cu + ca - rhs) / cb;
            for (s, bi) in step.iter_mut().zip(&b) {
                *s -= mult * bi;
            }
        }

        let feasible = violation <= FEASIBILITY_TOL;
        let (e0, scale) = if feasible {
            prob.energy(&u, &mut scratch)
        } else {
            (0.0, 0.0)
        };
        let slope: f64 = grad.iter().zip(&step).map(|(g, s)| g * s).sum();
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            for i in 0..ndof {
                trial[i] = u[i] + alpha * step[i];
            }
            if prob.in_domain(&trial) {
                if !feasible {
                    accepted = true;
                    break;
                }
                let (e1, _) = prob.energy(&trial, &mut scratch);
                if e1 <= e0 + 1e-4 * alpha * slope + 1e-14 * scale {
                    accepted = true;
                    break;
                }
                // Near convergence the energy change drops below round-off;
                // fall back to requiring a smaller residual.
                prob.gradient(&trial, &mut scratch, None);
                if prob.residual(&scratch).0 < res {
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            return Err(SimError::NonConvergence {
                iterations: iter + 1,
                residual,
            });
        }
        std::mem::swap(&mut u, &mut trial);
    }

    prob.gradient(&u, &mut grad, None);
    let (res, _) = prob.residual(&grad);
    let violation = prob.guide_value(&u).map_or(0.0, f64::abs);
    if res <= c.solver.tolerance && violation <= FEASIBILITY_TOL {
        return Ok(finish(&prob, state, &u, &grad));
    }
    Err(SimError::NonConvergence {
        iterations: c.solver.max_newton_iters,
        residual: res.max(residual.min(res)),
    })
}

fn finish(prob: &Problem<'_>, state: &SimState, u: &[f64], grad: &[f64]) -> Solution {
    let mut s = state.clone();
    for (i, node) in s.needle.nodes.iter_mut().enumerate() {
        node.y = u[2 * i];
        node.theta = u[2 * i + 1];
    }
    // Force the pin must supply: minus the unbalanced load at the tip dof,
    // less whatever share the guide multiplier carries there.
    let (_, lambda) = prob.residual(grad);
    let guide_share = prob
        .guide
        .as_ref()
        .and_then(|(row, _)| row.iter().find(|(d, _)| *d == prob.tip_dof).map(|&(_, v)| v))
        .unwrap_or(0.0);
    let tip_reaction = grad[prob.tip_dof] + lambda * guide_share;
    Solution {
        state: s,
        tip_reaction,
    }
}

pub(super) fn residual_norm(sim: &Simulator, state: &SimState) -> f64 {
    let prob = Problem::new(sim, state, None);
    let mut u = vec![0.0; 2 * sim.config().n_nodes];
    for (i, node) in state.needle.nodes.iter().enumerate() {
        u[2 * i] = node.y;
        u[2 * i + 1] = node.theta;
    }
    let mut grad = vec![0.0; u.len()];
    prob.gradient(&u, &mut grad, None);
    prob.residual(&grad).0
}
