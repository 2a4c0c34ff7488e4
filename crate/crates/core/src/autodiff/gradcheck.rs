use super::{Graph, ParamStore, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter entry with the largest error, as `name[r,c]: analytic vs numeric`.
    pub worst: String,
    pub checked: usize,
}

/// Compares analytic gradients of `f` against central differences with
/// step `h` over every trainable scalar of `store`.
///
/// Relative error is `|a - n| / max(|a|, |n|, 1e-6)`; the floor keeps
/// entries whose true gradient is zero from dividing by rounding noise.
pub fn finite_difference_check(
    store: &ParamStore,
    h: f64,
    f: impl Fn(&mut Graph) -> Var,
) -> GradCheckReport {
    let grads = {
        let mut g = Graph::new(store);
        let loss = f(&mut g);
        g.backward(loss)
    };
    let eval = |s: &ParamStore| {
        let mut g = Graph::new(s);
        let l = f(&mut g);
        g.scalar(l)
    };
    let mut probe = store.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: String::new(),
        checked: 0,
    };
    for id in store.ids().filter(|&id| store.is_trainable(id)) {
        let (rows, cols) = store.get(id).dim();
        for r in 0..rows {
            for c in 0..cols {
                let orig = probe.get(id)[[r, c]];
                probe.get_mut(id)[[r, c]] = orig + h;
                let up = eval(&probe);
                probe.get_mut(id)[[r, c]] = orig - h;
                let down = eval(&probe);
                probe.get_mut(id)[[r, c]] = orig;
                let numeric = (up - down) / (2.0 * h);
                let analytic = grads.get(id).map(|m| m[[r, c]]).unwrap_or(0.0);
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
                report.checked += 1;
                if rel > report.max_rel_error || report.worst.is_empty() {
                    report.max_rel_error = rel.max(report.max_rel_error);
                    report.worst =
                        format!("{}[{r},{c}]: {analytic:e} vs {numeric:e}", store.name(id));
                }
            }
        }
    }
    report
}
