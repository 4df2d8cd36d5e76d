//! Limited-memory BFGS with a strong-Wolfe line search.

use std::collections::VecDeque;

/// A differentiable objective. `eval` writes the gradient into `grad` and
/// returns the value together with any per-evaluation detail worth keeping
/// in the iteration history.
pub trait Objective {
    type Detail: Clone;

    fn eval(&mut self, x: &[f64], grad: &mut [f64]) -> (f64, Self::Detail);
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsSettings {
    pub memory: usize,
    pub max_iter: usize,
    /// Stop once the Euclidean gradient norm falls below this.
    pub grad_tol: f64,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    pub max_line_search: usize,
}

impl Default for LbfgsSettings {
    fn default() -> Self {
        LbfgsSettings {
            memory: 10,
            max_iter: 500,
            grad_tol: 1e-6,
            c1: 1e-4,
            c2: 0.9,
            max_line_search: 40,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradientTolerance,
    MaxIterations,
    /// The line search failed twice in a row (once after a memory reset).
    LineSearchFailure,
}

#[derive(Debug, Clone)]
pub struct IterationRecord<D> {
    pub iter: usize,
    pub value: f64,
    pub grad_norm: f64,
    /// Accepted step length along the search direction (0 for the start).
    pub step: f64,
    pub detail: D,
}

#[derive(Debug, Clone)]
pub struct LbfgsReport<D> {
    pub x: Vec<f64>,
    pub value: f64,
    pub termination: Termination,
    pub evaluations: usize,
    /// Starting point plus every accepted iterate.
    pub history: Vec<IterationRecord<D>>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

struct Point<D> {
    x: Vec<f64>,
    f: f64,
    g: Vec<f64>,
    detail: D,
}

struct LineSearch<'a, O: Objective> {
    obj: &'a mut O,
    evaluations: usize,
}

impl<'a, O: Objective> LineSearch<'a, O> {
    fn eval_at(&mut self, base: &[f64], dir: &[f64], alpha: f64) -> Point<O::Detail> {
        let x: Vec<f64> = base.iter().zip(dir).map(|(b, d)| b + alpha * d).collect();
        let mut g = vec![0.0; x.len()];
        let (f, detail) = self.obj.eval(&x, &mut g);
        self.evaluations += 1;
        Point { x, f, g, detail }
    }

    /// Strong-Wolfe search along `dir` from `start`; returns the accepted
    /// point and step or `None`.
    fn search(
        &mut self,
        start: &Point<O::Detail>,
        dir: &[f64],
        alpha0: f64,
        s: &LbfgsSettings,
    ) -> Option<(Point<O::Detail>, f64)> {
        let f0 = start.f;
        let d0 = dot(&start.g, dir);
        if !(d0 < 0.0) {
            return None;
        }
        let mut alpha_prev = 0.0;
        let mut f_prev = f0;
        let mut d_prev = d0;
        let mut alpha = alpha0;
        for i in 0..s.max_line_search {
            let p = self.eval_at(&start.x, dir, alpha);
            if !p.f.is_finite() || p.f > f0 + s.c1 * alpha * d0 || (i > 0 && p.f >= f_prev) {
                return self.zoom(start, dir, (alpha_prev, f_prev, d_prev), (alpha, p.f), s);
            }
            let dp = dot(&p.g, dir);
            if dp.abs() <= -s.c2 * d0 {
                return Some((p, alpha));
            }
            if dp >= 0.0 {
                return self.zoom(start, dir, (alpha, p.f, dp), (alpha_prev, f_prev), s);
            }
            alpha_prev = alpha;
            f_prev = p.f;
            d_prev = dp;
            alpha *= 2.0;
        }
        None
    }

    /// `lo` satisfies sufficient decrease with the lowest value seen so far.
    fn zoom(
        &mut self,
        start: &Point<O::Detail>,
        dir: &[f64],
        lo: (f64, f64, f64),
        hi: (f64, f64),
        s: &LbfgsSettings,
    ) -> Option<(Point<O::Detail>, f64)> {
        let f0 = start.f;
        let d0 = dot(&start.g, dir);
        let (mut a_lo, mut f_lo, mut d_lo) = lo;
        let (mut a_hi, mut f_hi) = hi;
        let mut best: Option<(Point<O::Detail>, f64)> = None;
        for _ in 0..s.max_line_search {
            let alpha = quadratic_min(a_lo, f_lo, d_lo, a_hi, f_hi);
            let p = self.eval_at(&start.x, dir, alpha);
            if !p.f.is_finite() || p.f > f0 + s.c1 * alpha * d0 || p.f >= f_lo {
                a_hi = alpha;
                f_hi = p.f;
            } else {
                let dp = dot(&p.g, dir);
                if dp.abs() <= -s.c2 * d0 {
                    return Some((p, alpha));
                }
                if dp * (a_hi - a_lo) >= 0.0 {
                    a_hi = a_lo;
                    f_hi = f_lo;
                }
                a_lo = alpha;
                f_lo = p.f;
                d_lo = dp;
                best = Some((p, alpha));
            }
            if (a_hi - a_lo).abs() <= 1e-16 * a_lo.abs().max(1.0) {
                break;
            }
        }
        // Accept a sufficient-decrease point when the curvature condition
        // cannot be met to machine precision.
        best.filter(|(p, _)| p.f < f0)
    }
}

/// Minimizer of the quadratic through `(a, fa)` with slope `da` at `a` and
/// value `fb` at `b`, safeguarded into the middle of the bracket.
fn quadratic_min(a: f64, fa: f64, da: f64, b: f64, fb: f64) -> f64 {
    let h = b - a;
    let denom = 2.0 * (fb - fa - da * h);
    let mut t = if denom > 0.0 && denom.is_finite() {
        -da * h * h / denom
    } else {
        0.5 * h
    };
    let lo = 0.1 * h.abs();
    let hi = 0.9 * h.abs();
    if !(t.abs() >= lo && t.abs() <= hi) || t * h < 0.0 {
        t = 0.5 * h;
    }
    a + t
}

/// Minimizes `obj` from `x0`.
pub fn minimize<O: Objective>(
    obj: &mut O,
    x0: Vec<f64>,
    s: &LbfgsSettings,
) -> LbfgsReport<O::Detail> {
    let n = x0.len();
    let mut g = vec![0.0; n];
    let (f, detail) = obj.eval(&x0, &mut g);
    let mut current = Point {
        x: x0,
        f,
        g,
        detail,
    };
    let mut history = vec![IterationRecord {
        iter: 0,
        value: current.f,
        grad_norm: norm(&current.g),
        step: 0.0,
        detail: current.detail.clone(),
    }];
    let mut mem: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(s.memory);
    let mut evaluations = 1;
    let mut termination = Termination::MaxIterations;

    for iter in 1..=s.max_iter {
        if norm(&current.g) < s.grad_tol {
            termination = Termination::GradientTolerance;
            break;
        }
        let mut accepted = None;
        for attempt in 0..2 {
            if attempt == 1 {
                mem.clear();
            }
            let dir = two_loop(&current.g, &mem);
            let alpha0 = if mem.is_empty() {
                (1.0 / norm(&current.g)).min(1.0)
            } else {
                1.0
            };
            let mut ls = LineSearch {
                obj: &mut *obj,
                evaluations: 0,
            };
            let found = ls.search(&current, &dir, alpha0, s);
            evaluations += ls.evaluations;
            if let Some(found) = found {
                accepted = Some(found);
                break;
            }
        }
        let Some((next, step)) = accepted else {
            termination = Termination::LineSearchFailure;
            break;
        };
        let sv: Vec<f64> = next.x.iter().zip(&current.x).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = next.g.iter().zip(&current.g).map(|(a, b)| a - b).collect();
        let sy = dot(&sv, &yv);
        if sy > 1e-12 * norm(&sv) * norm(&yv) {
            if mem.len() == s.memory {
                mem.pop_front();
            }
            mem.push_back((sv, yv, 1.0 / sy));
        }
        current = next;
        history.push(IterationRecord {
            iter,
            value: current.f,
            grad_norm: norm(&current.g),
            step,
            detail: current.detail.clone(),
        });
    }
    if termination == Termination::MaxIterations && norm(&current.g) < s.grad_tol {
        termination = Termination::GradientTolerance;
    }
    LbfgsReport {
        x: current.x,
        value: current.f,
        termination,
        evaluations,
        history,
    }
}

/// Search direction `-H g` from the two-loop recursion.
fn two_loop(g: &[f64], mem: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(mem.len());
    for (sv, yv, rho) in mem.iter().rev() {
        let a = rho * dot(sv, &q);
        for (qi, yi) in q.iter_mut().zip(yv) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((sv, yv, _)) = mem.back() {
        let gamma = dot(sv, yv) / dot(yv, yv);
        for qi in &mut q {
            *qi *= gamma;
        }
    }
    for ((sv, yv, rho), a) in mem.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(yv, &q);
        for (qi, si) in q.iter_mut().zip(sv) {
            *qi += (a - b) * si;
        }
    }
    for qi in &mut q {
        *qi = -*qi;
    }
    q
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Rosenbrock;

    impl Objective for Rosenbrock {
        type Detail = ();

        fn eval(&mut self, x: &[f64], g: &mut [f64]) -> (f64, ()) {
            let mut f = 0.0;
            g.iter_mut().for_each(|v| *v = 0.0);
            for i in 0..x.len() - 1 {
                let a = x[i + 1] - x[i] * x[i];
                let b = 1.0 - x[i];
                f += 100.0 * a * a + b * b;
                g[i] += -400.0 * a * x[i] - 2.0 * b;
                g[i + 1] += 200.0 * a;
            }
            (f, ())
        }
    }

    #[test]
    fn solves_rosenbrock() {
        let s = LbfgsSettings {
            max_iter: 2000,
            grad_tol: 1e-9,
            ..Default::default()
        };
        let r = minimize(&mut Rosenbrock, vec![-1.2, 1.0, -1.2, 1.0, 0.5], &s);
        assert_eq!(r.termination, Termination::GradientTolerance);
        for v in &r.x {
            assert!((v - 1.0).abs() < 1e-6, "{:?}", r.x);
        }
        assert!(r.history.windows(2).all(|w| w[1].value <= w[0].value));
    }

    struct Quadratic(Vec<f64>);

    impl Objective for Quadratic {
        type Detail = f64;

        fn eval(&mut self, x: &[f64], g: &mut [f64]) -> (f64, f64) {
            let mut f = 0.0;
            for i in 0..x.len() {
                f += 0.5 * self.0[i] * x[i] * x[i];
                g[i] = self.0[i] * x[i];
            }
            (f, f * 2.0)
        }
    }

    #[test]
    fn ill_conditioned_quadratic() {
        let diag: Vec<f64> = (0..50).map(|i| 10f64.powf(i as f64 / 49.0 * 4.0)).collect();
        let r = minimize(
            &mut Quadratic(diag),
            vec![1.0; 50],
            &LbfgsSettings {
                max_iter: 5000,
                ..LbfgsSettings::default()
            },
        );
        assert_eq!(r.termination, Termination::GradientTolerance);
        assert!(r.value < 1e-10);
        let last = r.history.last().unwrap();
        assert_eq!(last.detail, last.value * 2.0);
    }

    #[test]
    fn already_stationary() {
        let r = minimize(
            &mut Quadratic(vec![1.0; 3]),
            vec![0.0; 3],
            &LbfgsSettings::default(),
        );
        assert_eq!(r.termination, Termination::GradientTolerance);
        assert_eq!(r.history.len(), 1);
    }
}
