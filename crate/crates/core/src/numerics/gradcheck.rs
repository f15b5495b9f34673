//! Central finite-difference gradient checks.

use crate::numerics::{ParamId, ParamStore, Tape, Tensor, Var};

pub const FD_STEP: f64 = 1e-5;

/// `‖a − n‖ / max(‖a‖, ‖n‖)` over the full concatenated gradient vector.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let scale = norm(&mut analytic.iter().copied()).max(norm(&mut numeric.iter().copied()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Relative error between the tape gradient and central differences,
/// differentiating `f` with respect to every input tensor.
pub fn check_inputs<F>(inputs: &[Tensor], f: F) -> f64
where
    F: Fn(&mut Tape<'_, f64>, &[Var]) -> Var,
{
    check_inputs_on(inputs, Tape::new, f)
}

/// [`check_inputs`] on tapes built by `make_tape`. A training tape made from
/// a fixed seed replays the same dropout mask on every evaluation.
pub fn check_inputs_on<'p, M, F>(inputs: &[Tensor], make_tape: M, f: F) -> f64
where
    M: Fn() -> Tape<'p, f64>,
    F: Fn(&mut Tape<'p, f64>, &[Var]) -> Var,
{
    let eval = |xs: &[Tensor]| {
        let mut tape = make_tape();
        let vars: Vec<Var> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        let loss = f(&mut tape, &vars);
        tape.value(loss).item()
    };
    let mut tape = make_tape();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.constant(x.clone())).collect();
    let loss = f(&mut tape, &vars);
    let grads = tape.backward(loss).unwrap();

    let (mut all_a, mut all_n) = (Vec::new(), Vec::new());
    let mut xs = inputs.to_vec();
    for (i, &v) in vars.iter().enumerate() {
        let analytic = grads.wrt(v).cloned().unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        let mut numeric = Vec::with_capacity(inputs[i].len());
        for j in 0..inputs[i].len() {
            let orig = xs[i].data()[j];
            xs[i].data_mut()[j] = orig + FD_STEP;
            let up = eval(&xs);
            xs[i].data_mut()[j] = orig - FD_STEP;
            let down = eval(&xs);
            xs[i].data_mut()[j] = orig;
            numeric.push((up - down) / (2.0 * FD_STEP));
        }
        all_a.extend_from_slice(analytic.data());
        all_n.extend(numeric);
    }
    rel_err(&all_a, &all_n)
}

/// Same as [`check_inputs`] but differentiates parameters of a store.
pub fn check_params<F>(store: &ParamStore, ids: &[ParamId], f: F) -> f64
where
    F: Fn(&mut Tape<'_, f64>) -> Var,
{
    let grads = {
        let mut tape = Tape::with_params(store);
        let loss = f(&mut tape);
        let g = tape.backward(loss).unwrap();
        ids.iter().map(|&id| g.param(id).cloned().unwrap()).collect::<Vec<_>>()
    };
    let mut work = store.clone();
    let (mut all_a, mut all_n) = (Vec::new(), Vec::new());
    for (k, &id) in ids.iter().enumerate() {
        let mut numeric = Vec::with_capacity(store.get(id).len());
        for j in 0..store.get(id).len() {
            let orig = work.get(id).data()[j];
            work.get_mut(id).data_mut()[j] = orig + FD_STEP;
            let up = {
                let mut t = Tape::with_params(&work);
                let l = f(&mut t);
                t.value(l).item()
            };
            work.get_mut(id).data_mut()[j] = orig - FD_STEP;
            let down = {
                let mut t = Tape::with_params(&work);
                let l = f(&mut t);
                t.value(l).item()
            };
            work.get_mut(id).data_mut()[j] = orig;
            numeric.push((up - down) / (2.0 * FD_STEP));
        }
        all_a.extend_from_slice(grads[k].data());
        all_n.extend(numeric);
    }
    rel_err(&all_a, &all_n)
}
