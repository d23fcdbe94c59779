//! Derivative-free local minimization (Nelder-Mead simplex).

pub struct NelderMead {
    pub max_iter: usize,
    pub f_tol: f64,
    pub initial_step: f64,
}

impl Default for NelderMead {
    fn default() -> Self {
        Self { max_iter: 500, f_tol: 1e-12, initial_step: 0.1 }
    }
}

impl NelderMead {
    /// Returns the best point found and its value.
    pub fn minimize<F: Fn(&[f64]) -> f64>(&self, f: F, x0: &[f64]) -> (Vec<f64>, f64) {
        let dim = x0.len();
        let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
        for i in 0..dim {
            let mut p = x0.to_vec();
            p[i] += if p[i].abs() > 1e-8 { self.initial_step * p[i].abs().max(0.1) } else { self.initial_step };
            simplex.push(p);
        }
        let mut vals: Vec<f64> = simplex.iter().map(|p| f(p)).collect();

        for _ in 0..self.max_iter {
            let mut order: Vec<usize> = (0..=dim).collect();
            order.sort_by(|&a, &b| vals[a].partial_cmp(&vals[b]).unwrap_or(std::cmp::Ordering::Equal));
            simplex = order.iter().map(|&i| simplex[i].clone()).collect();
            vals = order.iter().map(|&i| vals[i]).collect();
            if (vals[dim] - vals[0]).abs() <= self.f_tol * (1.0 + vals[0].abs()) {
                break;
            }
            let centroid: Vec<f64> =
                (0..dim).map(|j| simplex[..dim].iter().map(|p| p[j]).sum::<f64>() / dim as f64).collect();
            let along =
                |t: f64| -> Vec<f64> { (0..dim).map(|j| centroid[j] + t * (simplex[dim][j] - centroid[j])).collect() };
            let xr = along(-1.0);
            let fr = f(&xr);
            if fr < vals[0] {
                let xe = along(-2.0);
                let fe = f(&xe);
                if fe < fr {
                    simplex[dim] = xe;
                    vals[dim] = fe;
                } else {
                    simplex[dim] = xr;
                    vals[dim] = fr;
                }
            } else if fr < vals[dim - 1] {
                simplex[dim] = xr;
                vals[dim] = fr;
            } else {
                let (xc, fc) = if fr < vals[dim] {
                    let x = along(-0.5);
                    let v = f(&x);
                    (x, v)
                } else {
                    let x = along(0.5);
                    let v = f(&x);
                    (x, v)
                };
                if fc < vals[dim].min(fr) {
                    simplex[dim] = xc;
                    vals[dim] = fc;
                } else {
                    for i in 1..=dim {
                        simplex[i] = (0..dim).map(|j| simplex[0][j] + 0.5 * (simplex[i][j] - simplex[0][j])).collect();
                        vals[i] = f(&simplex[i]);
                    }
                }
            }
        }
        let best =
            (0..=dim).min_by(|&a, &b| vals[a].partial_cmp(&vals[b]).unwrap_or(std::cmp::Ordering::Equal)).unwrap();
        (simplex[best].clone(), vals[best])
    }
}
