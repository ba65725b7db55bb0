use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::{ModelConfig, PatchGcn};
use crate::nn::gradcheck::{check_params, random_graph, GradcheckReport};
use crate::nn::{Exec, ParamStore, Tensor2};

/// Small model used by the end-to-end checks.
pub fn gradcheck_config(gated_attention: bool) -> ModelConfig {
    ModelConfig {
        d_feat: 5,
        d_model: 8,
        d_attn: 8,
        n_layers: 4,
        n_bins: 4,
        gated_attention,
        ..ModelConfig::default()
    }
}

/// Loss gradient of every model parameter against central differences on a
/// random 8-node graph with a random survival label. Biases are randomized
/// so that no parameter sits at its zero initialization.
pub fn model_gradcheck(seed: u64, gated_attention: bool) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0xC0FFEE);
    let mut model = PatchGcn::new(gradcheck_config(gated_attention), seed)?;
    for p in model.params_mut().iter_mut() {
        if p.value.rows() == 1 {
            for v in p.value.data_mut() {
                *v = rng.random_range(-0.3..0.3);
            }
        }
    }
    let graph = random_graph(&mut rng, 8, 0.35, 5);
    let input = model.input_tensor(&graph)?;
    let adj = Arc::new(graph.adjacency().clone());
    let bin = rng.random_range(0..4);
    let censored = rng.random_bool(0.3);
    let name = if gated_attention {
        "model_end_to_end_gated"
    } else {
        "model_end_to_end"
    };
    check_params(name, model.params(), |tape, store| {
        rebind(&model, store).loss_on(tape, &input, &adj, bin, censored)
    })
}

/// Gradient check of a single residual layer's parameters and input, with
/// a random linear read-out.
pub fn layer_gradcheck(seed: u64) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0x1A7E);
    let config = ModelConfig {
        d_feat: 8,
        d_model: 8,
        n_layers: 1,
        ..gradcheck_config(false)
    };
    let mut model = PatchGcn::new(config, seed)?;
    for p in model.params_mut().iter_mut() {
        if p.value.rows() == 1 {
            for v in p.value.data_mut() {
                *v = rng.random_range(-0.3..0.3);
            }
        }
    }
    let graph = random_graph(&mut rng, 8, 0.35, 8);
    let adj = Arc::new(graph.adjacency().clone());
    let readout_data = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
    let readout = Tensor2::new(8, 8, readout_data)?;
    let layer = model.layer_params()[0];

    let mut store = model.params().clone();
    let input_id = store.add("h", model.input_tensor(&graph)?);
    check_params("gcn_layer", &store, |tape, store| {
        let m = rebind(&model, store);
        let h = tape.param(store, input_id);
        let out = m.gcn_layer_forward(tape, &h, &adj, &layer)?;
        let r = tape.constant(readout.clone());
        let weighted = tape.mul(&out, &r)?;
        Ok(tape.sum(&weighted))
    })
}

/// Copy of `model` whose parameters take their values from the leading
/// entries of `store`.
fn rebind(model: &PatchGcn, store: &ParamStore) -> PatchGcn {
    let mut m = model.clone();
    for (dst, src) in m.params_mut().iter_mut().zip(store.iter()) {
        dst.value.clone_from(&src.value);
    }
    m
}
