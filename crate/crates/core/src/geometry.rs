//! Seeded samplers on the unit ball, its boundary sphere and the initial slice.
//!
//! All randomness descends from one master seed through ChaCha20 streams:
//! the generator is keyed with `seed_from_u64(master)` and every consumer
//! selects its own 64-bit stream id `(kind << 48) | index` (see [`substream`]).
//! Training batches of iteration `k` therefore depend only on `(master, k,
//! role)`, never on the weighting strategy or on what else was drawn.

use std::fmt;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, RqaError};

/// Points closer than this to the origin are redrawn; radial exact solutions
/// are not smooth there.
pub const ORIGIN_EXCLUSION: f64 = 1e-12;

/// Consumers of the master seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Init = 0,
    Interior = 1,
    Boundary = 2,
    Initial = 3,
    Test = 4,
    Check = 5,
}

/// Independent generator for `(master, kind, index)`.
pub fn substream(master: u64, kind: Stream, index: u64) -> ChaCha20Rng {
    debug_assert!(index < 1 << 48);
    let mut rng = ChaCha20Rng::seed_from_u64(master);
    rng.set_stream(((kind as u64) << 48) | index);
    rng
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Role {
    Interior,
    Boundary,
    Initial,
}

impl Role {
    pub fn stream(self) -> Stream {
        match self {
            Role::Interior => Stream::Interior,
            Role::Boundary => Stream::Boundary,
            Role::Initial => Stream::Initial,
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Interior => "interior",
            Role::Boundary => "boundary",
            Role::Initial => "initial",
        })
    }
}

/// Collocation points sharing one role. Spatial coordinates are stored row
/// by row in `xs`; `ts` holds the times (all 0 for stationary batches).
#[derive(Clone, Debug, PartialEq)]
pub struct PointBatch {
    pub role: Role,
    pub d: usize,
    pub time_dependent: bool,
    pub xs: Vec<f64>,
    pub ts: Vec<f64>,
}

impl PointBatch {
    pub fn len(&self) -> usize {
        self.ts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ts.is_empty()
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.xs[i * self.d..(i + 1) * self.d]
    }

    pub fn t(&self, i: usize) -> f64 {
        self.ts[i]
    }

    /// Network input matrix: one row per point, `[x..., t]` when time-dependent.
    pub fn network_inputs(&self) -> Array2<f64> {
        let n_in = self.d + usize::from(self.time_dependent);
        Array2::from_shape_fn((self.len(), n_in), |(i, j)| {
            if j < self.d {
                self.xs[i * self.d + j]
            } else {
                self.ts[i]
            }
        })
    }

    /// FNV-1a over the coordinate bit patterns. Stable across runs and platforms.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in self.xs.iter().chain(&self.ts) {
            for b in v.to_bits().to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }
}

fn check_counts(n: usize, d: usize) -> Result<()> {
    if n == 0 || d == 0 {
        return Err(RqaError::invalid(format!(
            "sampler needs n >= 1 and d >= 1 (got n={n}, d={d})"
        )));
    }
    Ok(())
}

/// Uniform direction on the unit sphere `S^{d-1}`, written into `out`.
fn sphere_direction<R: Rng>(rng: &mut R, out: &mut [f64]) {
    loop {
        let mut ss = 0.0;
        for v in out.iter_mut() {
            *v = rng.sample(StandardNormal);
            ss += *v * *v;
        }
        if ss > 0.0 {
            let inv = 1.0 / ss.sqrt();
            out.iter_mut().for_each(|v| *v *= inv);
            return;
        }
    }
}

/// Uniform point in the open unit ball, away from the origin.
fn ball_point<R: Rng>(rng: &mut R, out: &mut [f64]) {
    let d = out.len() as f64;
    loop {
        sphere_direction(rng, out);
        let u: f64 = rng.random();
        let r = u.powf(1.0 / d);
        out.iter_mut().for_each(|v| *v *= r);
        let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1.0 && norm >= ORIGIN_EXCLUSION {
            return;
        }
    }
}

/// Uniform time in the open interval `(0, horizon)`.
fn open_time<R: Rng>(rng: &mut R, horizon: f64) -> f64 {
    loop {
        let t = rng.random::<f64>() * horizon;
        if t > 0.0 && t < horizon {
            return t;
        }
    }
}

/// `n` points uniform on `{‖x‖ < 1} × (0, T)`; with `horizon = None` the
/// batch is stationary and every `t` is 0.
pub fn sample_interior<R: Rng>(
    n: usize,
    d: usize,
    horizon: Option<f64>,
    rng: &mut R,
) -> Result<PointBatch> {
    check_counts(n, d)?;
    let mut xs = vec![0.0; n * d];
    let mut ts = vec![0.0; n];
    for i in 0..n {
        ball_point(rng, &mut xs[i * d..(i + 1) * d]);
        if let Some(h) = horizon {
            ts[i] = open_time(rng, h);
        }
    }
    Ok(PointBatch {
        role: Role::Interior,
        d,
        time_dependent: horizon.is_some(),
        xs,
        ts,
    })
}

/// `n` points uniform on `{‖x‖ = 1} × (0, T)`.
pub fn sample_boundary<R: Rng>(
    n: usize,
    d: usize,
    horizon: Option<f64>,
    rng: &mut R,
) -> Result<PointBatch> {
    check_counts(n, d)?;
    let mut xs = vec![0.0; n * d];
    let mut ts = vec![0.0; n];
    for i in 0..n {
        sphere_direction(rng, &mut xs[i * d..(i + 1) * d]);
        if let Some(h) = horizon {
            ts[i] = open_time(rng, h);
        }
    }
    Ok(PointBatch {
        role: Role::Boundary,
        d,
        time_dependent: horizon.is_some(),
        xs,
        ts,
    })
}

/// `n` points uniform in the ball at `t = 0`.
pub fn sample_initial<R: Rng>(n: usize, d: usize, rng: &mut R) -> Result<PointBatch> {
    check_counts(n, d)?;
    let mut xs = vec![0.0; n * d];
    for i in 0..n {
        ball_point(rng, &mut xs[i * d..(i + 1) * d]);
    }
    Ok(PointBatch {
        role: Role::Initial,
        d,
        time_dependent: true,
        xs,
        ts: vec![0.0; n],
    })
}
