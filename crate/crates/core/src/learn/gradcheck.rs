//! Analytic gradients of a model against central finite differences.

use ndarray::Array2;
use rand::{Rng, RngCore};

use super::LearnError;
use crate::autodiff::{Tape, Var};
use crate::gdn::{rows_to_matrix, CommMatrices, GdnModel, HiddenState};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
}

/// `|n - a| / max(|n|, |a|, 1e-6)`.
pub fn relative_error(numeric: f64, analytic: f64) -> f64 {
    (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-6)
}

struct Probe {
    w_out: Array2<f64>,
    w_val: Option<Array2<f64>>,
    w_hid: Option<Array2<f64>>,
}

fn record(
    tape: &mut Tape,
    model: &GdnModel,
    comm: &CommMatrices,
    obs: &Array2<f64>,
    hidden: Option<&HiddenState>,
    probe: &Probe,
) -> Result<Var, LearnError> {
    let o = tape.constant(obs.clone());
    let h = hidden.map(|h| tape.constant(h.0.clone()));
    let out = model.forward_tape(tape, comm, o, h)?;
    let w = tape.constant(probe.w_out.clone());
    let p = tape.mul(out.outputs, w);
    let mut loss = tape.sum(p);
    for (v, w) in [(out.values, &probe.w_val), (out.hidden, &probe.w_hid)] {
        if let (Some(v), Some(w)) = (v, w) {
            let w = tape.constant(w.clone());
            let p = tape.mul(v, w);
            let s = tape.sum(p);
            loss = tape.add(loss, s);
        }
    }
    Ok(loss)
}

/// Compares every parameter's gradient of a random linear functional of
/// the model outputs, values and next hidden state.
pub fn check_model_gradients(
    model: &mut GdnModel,
    comm: &CommMatrices,
    obs: &[Vec<f64>],
    hidden: Option<&HiddenState>,
    step: f64,
    rng: &mut dyn RngCore,
) -> Result<GradCheck, LearnError> {
    let n = obs.len();
    let obs = rows_to_matrix(obs, model.config.obs_dim)?;
    let mut rand_mat =
        |r: usize, c: usize| Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0));
    let probe = Probe {
        w_out: rand_mat(n, model.config.n_outputs),
        w_val: model.config.value_head.then(|| rand_mat(n, 1)),
        w_hid: model
            .config
            .recurrent
            .then(|| rand_mat(n, model.config.hidden)),
    };
    let mut tape = Tape::new();
    let loss = record(&mut tape, model, comm, &obs, hidden, &probe)?;
    let grads = tape.backward(loss)?;
    let eval = |m: &GdnModel| -> Result<f64, LearnError> {
        let mut t = Tape::new();
        let l = record(&mut t, m, comm, &obs, hidden, &probe)?;
        Ok(t.scalar(l))
    };
    let mut worst = 0.0f64;
    let mut checked = 0;
    let ids: Vec<_> = model.params.ids().collect();
    for id in ids {
        let (rows, cols) = model.params.value(id).dim();
        for r in 0..rows {
            for c in 0..cols {
                let orig = model.params.value(id)[[r, c]];
                model.params.value_mut(id)[[r, c]] = orig + step;
                let up = eval(model);
                model.params.value_mut(id)[[r, c]] = orig - step;
                let down = eval(model);
                model.params.value_mut(id)[[r, c]] = orig;
                let numeric = (up? - down?) / (2.0 * step);
                let analytic = grads.get(id).map_or(0.0, |g| g[[r, c]]);
                worst = worst.max(relative_error(numeric, analytic));
                checked += 1;
            }
        }
    }
    Ok(GradCheck {
        max_rel_error: worst,
        checked,
    })
}
