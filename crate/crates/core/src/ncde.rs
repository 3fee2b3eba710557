//! Neural CDE encoder: `z_t = z_0 + ∫ f_θ(z_s) dX_s`, `z_0 = g_φ(X_0)`.
//!
//! The Stieltjes integral is solved as the ODE `dz/dt = f_θ(z) · dX/dt`
//! with fixed steps. The step schedule is the union of the uniform solver
//! grid, the hourly output grid, every knot time and every path breakpoint,
//! so anchor states are exact solver states and no step crosses a knot.
//!
//! Batches are integrated together: patients are ordered by end time and
//! each step only advances the patients whose path extends past it.

use rand::Rng;

use crate::controlpath::ControlPath;
use crate::error::{Error, Result};
use crate::nn::{BoundFfn, Ffn};
use crate::tensor::{Activation, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolverMethod {
    Euler,
    Rk4,
}

impl std::str::FromStr for SolverMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(SolverMethod::Euler),
            "rk4" => Ok(SolverMethod::Rk4),
            other => Err(Error::config(format!("unknown solver method `{other}`"))),
        }
    }
}

impl std::fmt::Display for SolverMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SolverMethod::Euler => "euler",
            SolverMethod::Rk4 => "rk4",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverConfig {
    pub method: SolverMethod,
    pub steps_per_hour: usize,
    /// Resolution of [`LatentTrajectory::grid_times`].
    pub grid_per_hour: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            method: SolverMethod::Rk4,
            steps_per_hour: 2,
            grid_per_hour: 1,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps_per_hour < 1 || self.grid_per_hour < 1 {
            return Err(Error::config("steps_per_hour and grid_per_hour must be >= 1"));
        }
        Ok(())
    }
}

/// Parameters of the initial map `g_φ` and the vector field `f_θ`.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub g_phi: Ffn,
    pub f_theta: Ffn,
    latent_dim: usize,
    path_dim: usize,
}

impl EncoderParams {
    /// `g_φ = [d+1 → hidden → d_z]`, `f_θ = [d_z → hidden → hidden → d_z·(d+1)]`
    /// with tanh hidden units and a tanh-bounded field.
    pub fn init<R: Rng>(n_features: usize, latent_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let path_dim = n_features + 1;
        let g_phi = Ffn::init(&[path_dim, hidden, latent_dim], Activation::Tanh, Activation::Identity, 1.0, rng);
        let f_theta = Ffn::init(
            &[latent_dim, hidden, hidden, latent_dim * path_dim],
            Activation::Tanh,
            Activation::Tanh,
            1.0,
            rng,
        );
        EncoderParams {
            g_phi,
            f_theta,
            latent_dim,
            path_dim,
        }
    }

    pub fn from_networks(g_phi: Ffn, f_theta: Ffn) -> Result<Self> {
        let latent_dim = g_phi.output_dim();
        let path_dim = g_phi.input_dim();
        if f_theta.input_dim() != latent_dim || f_theta.output_dim() != latent_dim * path_dim {
            return Err(Error::Shape {
                op: "encoder",
                lhs: vec![f_theta.input_dim(), f_theta.output_dim()],
                rhs: vec![latent_dim, latent_dim * path_dim],
            });
        }
        Ok(EncoderParams {
            g_phi,
            f_theta,
            latent_dim,
            path_dim,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    /// `d + 1`.
    pub fn path_dim(&self) -> usize {
        self.path_dim
    }

    /// `f_θ(z)` as a row-major `d_z × (d+1)` matrix.
    pub fn vector_field(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.f_theta.eval_row(z)
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundEncoder {
        BoundEncoder {
            g_phi: self.g_phi.bind(tape, trainable),
            f_theta: self.f_theta.bind(tape, trainable),
            path_dim: self.path_dim,
        }
    }
}

/// `f_θ(z) · dX/dt`.
pub fn latent_velocity(z: &[f64], dxdt: &[f64], params: &EncoderParams) -> Result<Vec<f64>> {
    if z.len() != params.latent_dim || dxdt.len() != params.path_dim {
        return Err(Error::Shape {
            op: "latent_velocity",
            lhs: vec![z.len(), dxdt.len()],
            rhs: vec![params.latent_dim, params.path_dim],
        });
    }
    let field = params.vector_field(z)?;
    let q = params.path_dim;
    Ok(field.chunks(q).map(|row| row.iter().zip(dxdt).map(|(a, b)| a * b).sum()).collect())
}

#[derive(Clone, Debug)]
pub struct BoundEncoder {
    g_phi: BoundFfn,
    f_theta: BoundFfn,
    path_dim: usize,
}

impl BoundEncoder {
    pub fn vars(&self) -> Vec<Var> {
        let mut v = self.g_phi.vars();
        v.extend(self.f_theta.vars());
        v
    }

    fn velocity(&self, tape: &mut Tape, z: Var, dx: Tensor) -> Result<Var> {
        let field = self.f_theta.forward(tape, z)?;
        let dx = tape.constant(dx);
        tape.row_matvec(field, dx)
    }
}

/// A state stored on a tape: row `row` of node `var`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StateRef {
    pub time: f64,
    pub var: Var,
    pub row: usize,
}

/// Tape-resident trajectory of one patient.
#[derive(Clone, Debug)]
pub struct TapeTrajectory {
    pub grid: Vec<StateRef>,
    pub anchors: Vec<StateRef>,
    pub last: StateRef,
}

impl TapeTrajectory {
    pub fn materialize(&self, tape: &Tape) -> LatentTrajectory {
        let read = |r: &StateRef| tape.value(r.var).row(r.row).to_vec();
        LatentTrajectory {
            grid_times: self.grid.iter().map(|r| r.time).collect(),
            grid_states: self.grid.iter().map(read).collect(),
            anchor_times: self.anchors.iter().map(|r| r.time).collect(),
            anchor_states: self.anchors.iter().map(read).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentTrajectory {
    pub grid_times: Vec<f64>,
    pub grid_states: Vec<Vec<f64>>,
    pub anchor_times: Vec<f64>,
    pub anchor_states: Vec<Vec<f64>>,
}

impl LatentTrajectory {
    pub fn last_state(&self) -> &[f64] {
        self.anchor_states.last().expect("trajectory has at least one anchor")
    }

    pub fn initial_state(&self) -> &[f64] {
        &self.grid_states[0]
    }
}

fn output_grid(end: f64, per_hour: usize) -> Vec<f64> {
    let mut out = Vec::new();
    let mut k = 0usize;
    loop {
        let t = k as f64 / per_hour as f64;
        if t > end {
            break;
        }
        out.push(t);
        k += 1;
    }
    out
}

fn step_schedule(paths: &[&ControlPath], cfg: &SolverConfig) -> Vec<f64> {
    let t_max = paths.iter().map(|p| p.end_time()).fold(0.0, f64::max);
    let mut times = output_grid(t_max, cfg.steps_per_hour);
    times.extend(output_grid(t_max, cfg.grid_per_hour));
    for p in paths {
        times.extend_from_slice(p.knot_times());
        times.extend(p.breakpoints());
    }
    times.push(t_max);
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    times.dedup();
    times
}

/// Integrates a batch of paths on `tape`. Returned trajectories are in the
/// order of `paths`.
pub fn encode_batch(tape: &mut Tape, enc: &BoundEncoder, paths: &[&ControlPath], cfg: &SolverConfig) -> Result<Vec<TapeTrajectory>> {
    cfg.validate()?;
    if paths.is_empty() {
        return Err(Error::usage("encode_batch needs at least one path"));
    }
    let q = enc.path_dim;
    if let Some(p) = paths.iter().find(|p| p.dim() != q) {
        return Err(Error::Shape {
            op: "encode",
            lhs: vec![p.dim()],
            rhs: vec![q],
        });
    }

    // Rows are kept sorted by decreasing end time so the active set is a prefix.
    let mut order: Vec<usize> = (0..paths.len()).collect();
    order.sort_by(|&a, &b| paths[b].end_time().partial_cmp(&paths[a].end_time()).unwrap());
    let mut row_of = vec![0usize; paths.len()];
    for (r, &p) in order.iter().enumerate() {
        row_of[p] = r;
    }

    let schedule = step_schedule(paths, cfg);
    let mut states: Vec<Var> = Vec::with_capacity(schedule.len());

    let x0: Vec<f64> = order.iter().flat_map(|&p| paths[p].start().to_vec()).collect();
    let x0 = tape.constant(Tensor::matrix(order.len(), q, x0)?);
    let mut z = enc.g_phi.forward(tape, x0).map_err(|e| diverged(e, 0.0))?;
    states.push(z);
    let mut n_active = order.len();

    for w in schedule.windows(2) {
        let (a, b) = (w[0], w[1]);
        let still = order.iter().take_while(|&&p| paths[p].end_time() > a).count();
        if still == 0 {
            break;
        }
        if still < n_active {
            let refs: Vec<(Var, usize)> = (0..still).map(|r| (z, r)).collect();
            z = tape.gather_rows(&refs)?;
            n_active = still;
        }
        let active = &order[..n_active];
        let h = b - a;
        let mid = 0.5 * (a + b);
        let dx_at = |t: f64| -> Result<Tensor> {
            let data: Vec<f64> = active
                .iter()
                .flat_map(|&p| paths[p].derivative_in_piece(t, mid))
                .collect();
            Tensor::matrix(active.len(), q, data)
        };
        let step = |tape: &mut Tape, z: Var| -> Result<Var> {
            match cfg.method {
                SolverMethod::Euler => {
                    let k1 = enc.velocity(tape, z, dx_at(a)?)?;
                    tape.lincomb(&[(z, 1.0), (k1, h)])
                }
                SolverMethod::Rk4 => {
                    let d_mid = dx_at(mid)?;
                    let k1 = enc.velocity(tape, z, dx_at(a)?)?;
                    let z2 = tape.lincomb(&[(z, 1.0), (k1, 0.5 * h)])?;
                    let k2 = enc.velocity(tape, z2, d_mid.clone())?;
                    let z3 = tape.lincomb(&[(z, 1.0), (k2, 0.5 * h)])?;
                    let k3 = enc.velocity(tape, z3, d_mid)?;
                    let z4 = tape.lincomb(&[(z, 1.0), (k3, h)])?;
                    let k4 = enc.velocity(tape, z4, dx_at(b)?)?;
                    tape.lincomb(&[(z, 1.0), (k1, h / 6.0), (k2, h / 3.0), (k3, h / 3.0), (k4, h / 6.0)])
                }
            }
        };
        z = step(tape, z).map_err(|e| diverged(e, a))?;
        states.push(z);
    }

    let index_of = |t: f64| -> usize {
        schedule
            .binary_search_by(|s| s.partial_cmp(&t).unwrap())
            .expect("knot and grid times are part of the schedule")
    };

    let mut out = Vec::with_capacity(paths.len());
    for (p, path) in paths.iter().enumerate() {
        let row = row_of[p];
        let at = |t: f64| StateRef {
            time: t,
            var: states[index_of(t)],
            row,
        };
        let grid = output_grid(path.end_time(), cfg.grid_per_hour).into_iter().map(at).collect();
        let anchors: Vec<StateRef> = path.knot_times().iter().map(|&t| at(t)).collect();
        let last = *anchors.last().unwrap();
        out.push(TapeTrajectory { grid, anchors, last });
    }
    Ok(out)
}

fn diverged(e: Error, time: f64) -> Error {
    match e {
        Error::NonFinite { op } => Error::Divergence {
            time,
            detail: format!("non-finite latent state from {op}"),
        },
        other => other,
    }
}

/// Solves one path without recording gradients.
pub fn encode(path: &ControlPath, params: &EncoderParams, cfg: &SolverConfig) -> Result<LatentTrajectory> {
    let mut tape = Tape::new();
    let enc = params.bind(&mut tape, false);
    let traj = encode_batch(&mut tape, &enc, &[path], cfg)?;
    Ok(traj[0].materialize(&tape))
}

/// Solves many paths without gradients, `chunk` paths per tape.
pub fn encode_many(paths: &[&ControlPath], params: &EncoderParams, cfg: &SolverConfig, chunk: usize) -> Result<Vec<LatentTrajectory>> {
    let mut out = Vec::with_capacity(paths.len());
    for part in paths.chunks(chunk.max(1)) {
        let mut tape = Tape::new();
        let enc = params.bind(&mut tape, false);
        let trajs = encode_batch(&mut tape, &enc, part, cfg)?;
        out.extend(trajs.iter().map(|t| t.materialize(&tape)));
    }
    Ok(out)
}
