//! Central finite-difference checks of tape gradients.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::graph::{Adjacency, WsiGraph};
use crate::ingest::{FeatureMatrix, PatchCoord};
use crate::nn::{Exec, ParamStore, Tape, Tensor2, Var};

pub const FD_STEP: f64 = 1e-3;
/// Gradients smaller than this are compared in absolute terms.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates whose perturbation crossed a ReLU/clamp kink.
    pub skipped: usize,
    pub worst_param: Option<String>,
}

impl GradcheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.checked > 0 && self.max_rel_error < tolerance
    }

    pub fn merge(&mut self, other: &GradcheckReport) {
        if other.max_rel_error > self.max_rel_error {
            self.max_rel_error = other.max_rel_error;
            self.worst_param = other.worst_param.clone();
        }
        self.checked += other.checked;
        self.skipped += other.skipped;
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares the tape gradient of the scalar built by `loss` with central
/// differences in every parameter coordinate.
pub fn check_params<F>(name: &str, store: &ParamStore, loss: F) -> Result<GradcheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut analytic = store.clone();
    analytic.zero_grad();
    let mut tape = Tape::new();
    let out = loss(&mut tape, &analytic)?;
    tape.backward(out, &mut analytic)?;
    let base_pattern = tape.activation_pattern();

    let eval = |s: &ParamStore| -> Result<(f64, Vec<bool>)> {
        let mut tape = Tape::new();
        let out = loss(&mut tape, s)?;
        Ok((tape.value(&out).item(), tape.activation_pattern()))
    };

    let mut report = GradcheckReport {
        name: name.to_string(),
        ..GradcheckReport::default()
    };
    let mut probe = store.clone();
    for id in 0..store.len() {
        for k in 0..store.value(id).len() {
            let original = store.value(id).data()[k];
            // Fourth-order central stencil: truncation error O(h^4) lets the
            // step stay large enough that rounding in the loss is negligible.
            let mut values = [0.0; 4];
            let mut crossed = false;
            for (slot, offset) in values.iter_mut().zip([-2.0, -1.0, 1.0, 2.0]) {
                probe.value_mut(id).data_mut()[k] = original + offset * FD_STEP;
                let (value, pattern) = eval(&probe)?;
                *slot = value;
                crossed |= pattern != base_pattern;
            }
            probe.value_mut(id).data_mut()[k] = original;

            if crossed {
                report.skipped += 1;
                continue;
            }
            let [m2, m1, p1, p2] = values;
            let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * FD_STEP);
            let err = relative_error(analytic.grad(id).data()[k], numeric);
            report.checked += 1;
            if err >= report.max_rel_error {
                report.max_rel_error = err;
                report.worst_param = Some(format!("{}[{k}]", store.get(id).name));
            }
        }
    }
    Ok(report)
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor2 {
    let data = (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect();
    Tensor2::new(rows, cols, data).expect("sized")
}

/// Values in `[-hi, -lo] U [lo, hi]`, away from zero.
fn signed_away_from_zero(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor2 {
    let data = (0..rows * cols)
        .map(|_| {
            let v = rng.random_range(lo..hi);
            if rng.random::<bool>() {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor2::new(rows, cols, data).expect("sized")
}

/// Erdos-Renyi graph on `n` nodes with uniform random features.
pub fn random_graph(rng: &mut ChaCha8Rng, n: usize, edge_prob: f64, feature_dim: usize) -> WsiGraph {
    let mut edges = Vec::new();
    for a in 0..n as u32 {
        for b in a + 1..n as u32 {
            if rng.random::<f64>() < edge_prob {
                edges.push((a, b));
            }
        }
    }
    let data = (0..n * feature_dim)
        .map(|_| rng.random_range(-1.0f32..1.0))
        .collect();
    let features = FeatureMatrix::new(n, feature_dim, data).expect("sized");
    let coords = (0..n)
        .map(|i| PatchCoord {
            patch_id: i as u64,
            slide_id: "random".into(),
            x: i as u64 * 256,
            y: 0,
        })
        .collect();
    WsiGraph::new("random", features, coords, edges).expect("valid edges")
}

type Builder = fn(&mut Tape, &ParamStore, &Context) -> Result<Var>;

struct Context {
    projection: Tensor2,
    adjacency: Arc<Adjacency>,
}

/// Projects an output onto a fixed random direction so every primitive
/// yields a scalar with non-trivial gradients.
fn project(tape: &mut Tape, out: Var, ctx: &Context) -> Result<Var> {
    let shape = tape.value(&out).shape();
    let weights = Tensor2::new(
        shape.0,
        shape.1,
        ctx.projection.data()[..shape.0 * shape.1].to_vec(),
    )?;
    let w = tape.constant(weights);
    let prod = tape.mul(&out, &w)?;
    Ok(tape.sum(&prod))
}

struct PrimitiveCase {
    name: &'static str,
    inputs: fn(&mut ChaCha8Rng) -> Vec<Tensor2>,
    build: Builder,
}

fn primitive_cases() -> Vec<PrimitiveCase> {
    fn pair(rng: &mut ChaCha8Rng) -> Vec<Tensor2> {
        vec![uniform(rng, 3, 4, -1.5, 1.5), uniform(rng, 3, 4, -1.5, 1.5)]
    }
    fn single(rng: &mut ChaCha8Rng) -> Vec<Tensor2> {
        vec![uniform(rng, 4, 3, -2.0, 2.0)]
    }
    vec![
        PrimitiveCase {
            name: "matmul",
            inputs: |rng| vec![uniform(rng, 3, 5, -1.0, 1.0), uniform(rng, 5, 2, -1.0, 1.0)],
            build: |t, s, c| {
                let (a, b) = (t.param(s, 0), t.param(s, 1));
                let out = t.matmul(&a, &b)?;
                project(t, out, c)
            },
        },
        PrimitiveCase {
            name: "add",
            inputs: pair,
            build: |t, s, c| {
                let (a, b) = (t.param(s, 0), t.param(s, 1));
                let out = t.add(&a, &b)?;
                project(t, out, c)
            },
        },
        PrimitiveCase {
            name: "mul",
            inputs: pair,
            build: |t, s, c| {
                let (a, b) = (t.param(s, 0), t.param(s, 1));
                let out = t.mul(&a, &b)?;
                project(t, out, c)
            },
        },
        PrimitiveCase {
            name: "add_broadcast_row",
            inputs: |rng| vec![uniform(rng, 4, 3, -1.0, 1.0), uniform(rng, 1, 3, -1.0, 1.0)],
            build: |t, s, c| {
                let (a, b) = (t.param(s, 0), t.param(s, 1));
                let out = t.add_broadcast_row(&a, &b)?;
                project(t, out, c)
            },
        },
        PrimitiveCase {
            name: "add_scalar_scale",
            inputs: single,
            build: |t, s, c| {
                let a = t.param(s, 0);
                let b = t.add_scalar(&a, 0.37);
                let out = t.scale(&b, -1.7);
                project(t, out, c)
            },
        },
        PrimitiveCase {
            name: "relu",
            inputs: |rng| vec![signed_away_from_zero(rng, 4, 3, 0.05, 2.0)],
            build: |t, s, c| {
                let a = t.param(s, 0);
                let out = t.relu(&a);
                project(t, out, c)
            },
        },
        PrimitiveCase {
            name: "tanh",
            inputs: single,
            build: |t, s, c| {
                let a = t.param(s, 0);
                let out = t.tanh(&a);
                project(t, out, c)
            },
        },
        PrimitiveCase {
            name: "sigmoid",
            inputs: single,
            build: |t, s, c| {
                let a = t.param(s, 0);
                let out = t.sigmoid(&a);
                project(t, out, c)
            },
        },
        PrimitiveCase {
            name: "exp",
            inputs: single,
            build: |t, s, c| {
                let a = t.param(s, 0);
                let out = t.exp(&a);
                project(t, out, c)
            },
        },
        PrimitiveCase {
            name: "log",
            inputs: |rng| vec![uniform(rng, 4, 3, 0.3, 3.0)],
            build: |t, s, c| {
                let a = t.param(s, 0);
                let out = t.log(&a);
                project(t, out, c)
            },
        },
        PrimitiveCase {
            name: "clamp",
            inputs: |rng| vec![signed_away_from_zero(rng, 4, 3, 0.2, 1.8)],
            build: |t, s, c| {
                let a = t.param(s, 0);
                let out = t.clamp(&a, -1.0, 1.0);
                project(t, out, c)
            },
        },
        PrimitiveCase {
            name: "rowwise_softmax",
            inputs: single,
            build: |t, s, c| {
                let a = t.param(s, 0);
                let out = t.rowwise_softmax(&a);
                project(t, out, c)
            },
        },
        PrimitiveCase {
            name: "transpose",
            inputs: single,
            build: |t, s, c| {
                let a = t.param(s, 0);
                let out = t.transpose(&a);
                project(t, out, c)
            },
        },
        PrimitiveCase {
            name: "concat_cols",
            inputs: |rng| vec![uniform(rng, 3, 2, -1.0, 1.0), uniform(rng, 3, 3, -1.0, 1.0)],
            build: |t, s, c| {
                let (a, b) = (t.param(s, 0), t.param(s, 1));
                let out = t.concat_cols(&[a, b, a])?;
                project(t, out, c)
            },
        },
        PrimitiveCase {
            name: "sum_mean",
            inputs: single,
            build: |t, s, c| {
                let a = t.param(s, 0);
                let b = t.tanh(&a);
                let sum = t.sum(&b);
                let sq = t.mul(&b, &b)?;
                let mean = t.mean(&sq);
                let out = t.add(&sum, &mean)?;
                project(t, out, c)
            },
        },
        PrimitiveCase {
            name: "neighbor_softmax_aggregate",
            inputs: |rng| vec![uniform(rng, 6, 3, -1.5, 1.5)],
            build: |t, s, c| {
                let a = t.param(s, 0);
                let out = t.neighbor_softmax_aggregate(&a, &c.adjacency, 1.3)?;
                project(t, out, c)
            },
        },
        PrimitiveCase {
            name: "survival_nll_uncensored",
            inputs: |rng| vec![uniform(rng, 1, 4, -3.0, 3.0)],
            build: |t, s, _| {
                let a = t.param(s, 0);
                t.survival_nll(&a, 2, false)
            },
        },
        PrimitiveCase {
            name: "survival_nll_censored",
            inputs: |rng| vec![uniform(rng, 1, 4, -3.0, 3.0)],
            build: |t, s, _| {
                let a = t.param(s, 0);
                t.survival_nll(&a, 3, true)
            },
        },
    ]
}

/// Runs every primitive check with the given seed.
pub fn primitive_gradchecks(seed: u64) -> Result<Vec<GradcheckReport>> {
    let mut reports = Vec::new();
    for (i, case) in primitive_cases().into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let mut store = ParamStore::new();
        for (k, t) in (case.inputs)(&mut rng).into_iter().enumerate() {
            store.add(format!("{}.in{k}", case.name), t);
        }
        let graph = random_graph(&mut rng, 6, 0.4, 1);
        let ctx = Context {
            projection: signed_away_from_zero(&mut rng, 1, 64, 0.5, 1.5),
            adjacency: Arc::new(graph.adjacency().clone()),
        };
        let build = case.build;
        reports.push(check_params(case.name, &store, |t, s| build(t, s, &ctx))?);
    }
    Ok(reports)
}
