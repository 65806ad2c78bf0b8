//! Box-constrained Nelder–Mead.
//!
//! Trial points are projected onto the box, so the objective is never
//! evaluated outside it. After the simplex collapses the search is restarted
//! once from the best vertex with a fresh simplex, which recovers from
//! vertices that were flattened against a bound.

#[derive(Debug, Clone)]
pub struct NelderMeadOptions {
    pub max_evals: usize,
    /// Simplex diameter below which the search stops.
    pub xtol: f64,
    /// Initial step as a fraction of each box width.
    pub initial_step: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        NelderMeadOptions { max_evals: 10_000, xtol: 1e-10, initial_step: 0.1 }
    }
}

#[derive(Debug, Clone)]
pub struct NelderMeadResult<const D: usize> {
    pub x: [f64; D],
    pub f: f64,
    pub evals: usize,
    pub converged: bool,
}

struct Search<'a, const D: usize, F> {
    f: &'a F,
    lo: [f64; D],
    hi: [f64; D],
    evals: usize,
}

impl<const D: usize, F: Fn(&[f64; D]) -> f64> Search<'_, D, F> {
    fn project(&self, mut x: [f64; D]) -> [f64; D] {
        for i in 0..D {
            x[i] = x[i].clamp(self.lo[i], self.hi[i]);
        }
        x
    }

    fn eval(&mut self, x: &[f64; D]) -> f64 {
        self.evals += 1;
        let v = (self.f)(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    }

    fn simplex_around(&mut self, x0: [f64; D], step: f64) -> Vec<([f64; D], f64)> {
        let mut simplex = Vec::with_capacity(D + 1);
        let f0 = self.eval(&x0);
        simplex.push((x0, f0));
        for i in 0..D {
            let mut x = x0;
            let h = step * (self.hi[i] - self.lo[i]);
            x[i] = if x0[i] + h <= self.hi[i] { x0[i] + h } else { x0[i] - h };
            let x = self.project(x);
            let fx = self.eval(&x);
            simplex.push((x, fx));
        }
        simplex
    }

    fn diameter(simplex: &[([f64; D], f64)]) -> f64 {
        let best = simplex[0].0;
        simplex[1..]
            .iter()
            .map(|(x, _)| x.iter().zip(best.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max)
    }

    /// Runs until the simplex collapses or the budget is spent.
    fn run(&mut self, mut simplex: Vec<([f64; D], f64)>, opts: &NelderMeadOptions) -> (([f64; D], f64), bool) {
        let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
        loop {
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            if Self::diameter(&simplex) <= opts.xtol {
                return (simplex[0], true);
            }
            if self.evals >= opts.max_evals {
                return (simplex[0], false);
            }
            let worst = simplex[D];
            let mut centroid = [0.0; D];
            for (x, _) in &simplex[..D] {
                for i in 0..D {
                    centroid[i] += x[i] / D as f64;
                }
            }
            let toward = |k: f64| {
                let mut p = [0.0; D];
                for i in 0..D {
                    p[i] = centroid[i] + k * (worst.0[i] - centroid[i]);
                }
                p
            };
            let xr = self.project(toward(-alpha));
            let fr = self.eval(&xr);
            if fr < simplex[0].1 {
                let xe = self.project(toward(-gamma));
                let fe = self.eval(&xe);
                simplex[D] = if fe < fr { (xe, fe) } else { (xr, fr) };
                continue;
            }
            if fr < simplex[D - 1].1 {
                simplex[D] = (xr, fr);
                continue;
            }
            let (xc, fc) = if fr < worst.1 {
                let xc = self.project(toward(-rho));
                (xc, self.eval(&xc))
            } else {
                let xc = self.project(toward(rho));
                (xc, self.eval(&xc))
            };
            if fc < worst.1.min(fr) {
                simplex[D] = (xc, fc);
                continue;
            }
            let best = simplex[0].0;
            for v in simplex.iter_mut().skip(1) {
                let mut x = [0.0; D];
                for i in 0..D {
                    x[i] = best[i] + sigma * (v.0[i] - best[i]);
                }
                let x = self.project(x);
                *v = (x, self.eval(&x));
            }
        }
    }
}

/// Minimizes `f` over the box `[lo, hi]` starting from `x0`.
pub fn minimize_bounded<const D: usize, F>(
    f: &F,
    x0: [f64; D],
    lo: [f64; D],
    hi: [f64; D],
    opts: &NelderMeadOptions,
) -> NelderMeadResult<D>
where
    F: Fn(&[f64; D]) -> f64,
{
    let mut search = Search { f, lo, hi, evals: 0 };
    let start = search.project(x0);
    let simplex = search.simplex_around(start, opts.initial_step);
    let ((x, fx), converged) = search.run(simplex, opts);
    if !converged {
        return NelderMeadResult { x, f: fx, evals: search.evals, converged };
    }
    let simplex = search.simplex_around(x, opts.initial_step * 0.5);
    let ((x2, f2), _) = search.run(simplex, opts);
    let (x, fx) = if f2 <= fx { (x2, f2) } else { (x, fx) };
    NelderMeadResult { x, f: fx, evals: search.evals, converged: true }
}
