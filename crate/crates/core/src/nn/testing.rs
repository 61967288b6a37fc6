//! Finite-difference gradient checking for unit tests.

use super::graph::{Graph, Var};
use super::tensor::Tensor;

/// Compares analytic gradients of `f` with central differences at `inputs`.
pub(crate) fn check_grad<F>(inputs: &[Tensor<f64>], f: F)
where
    F: for<'g> Fn(&'g Graph<f64>, &[Var<'g, f64>]) -> Var<'g, f64>,
{
    let g = Graph::new();
    let vars: Vec<_> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let loss = f(&g, &vars);
    let grads = g.backward(loss);
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| grads.of(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    let eval = |xs: &[Tensor<f64>]| {
        let g = Graph::new();
        let vars: Vec<_> = xs.iter().map(|t| g.leaf(t.clone())).collect();
        f(&g, &vars).item()
    };
    let h = 1e-6;
    for (k, t) in inputs.iter().enumerate() {
        for i in 0..t.len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += h;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= h;
            let num = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let ana = analytic[k].data()[i];
            let tol = 1e-6 + 1e-5 * ana.abs().max(num.abs());
            assert!(
                (ana - num).abs() <= tol,
                "input {k} element {i}: analytic {ana} vs numeric {num}"
            );
        }
    }
}
