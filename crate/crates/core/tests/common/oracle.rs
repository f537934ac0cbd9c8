//! Textbook Kalman recursion on plain nested vectors, written without any of
//! the crate's matrix code.

pub type Mat = Vec<Vec<f64>>;

pub fn zeros(r: usize, c: usize) -> Mat {
    vec![vec![0.0; c]; r]
}

pub fn diag(d: &[f64]) -> Mat {
    let mut m = zeros(d.len(), d.len());
    for (i, v) in d.iter().enumerate() {
        m[i][i] = *v;
    }
    m
}

pub fn mul(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = zeros(n, m);
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for l in 0..k {
                s += a[i][l] * b[l][j];
            }
            out[i][j] = s;
        }
    }
    out
}

pub fn mul_vec(a: &Mat, x: &[f64]) -> Vec<f64> {
    a.iter().map(|row| row.iter().zip(x).map(|(p, q)| p * q).sum()).collect()
}

pub fn transpose(a: &Mat) -> Mat {
    let mut out = zeros(a[0].len(), a.len());
    for (i, row) in a.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            out[j][i] = *v;
        }
    }
    out
}

fn combine(a: &Mat, b: &Mat, sign: f64) -> Mat {
    a.iter()
        .zip(b)
        .map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| x + sign * y).collect())
        .collect()
}

pub fn add(a: &Mat, b: &Mat) -> Mat {
    combine(a, b, 1.0)
}

pub fn sub(a: &Mat, b: &Mat) -> Mat {
    combine(a, b, -1.0)
}

fn symmetrize(p: &Mat) -> Mat {
    let n = p.len();
    let mut out = zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out[i][j] = 0.5 * (p[i][j] + p[j][i]);
        }
    }
    out
}

fn inverse2(s: &Mat) -> Mat {
    let det = s[0][0] * s[1][1] - s[0][1] * s[1][0];
    vec![vec![s[1][1] / det, -s[0][1] / det], vec![-s[1][0] / det, s[0][0] / det]]
}

/// Constant-acceleration transition.
pub fn ca_transition(dt: f64) -> Mat {
    let mut a = diag(&[1.0; 6]);
    for i in 0..2 {
        a[i][i + 2] = dt;
        a[i][i + 4] = 0.5 * dt * dt;
        a[i + 2][i + 4] = dt;
    }
    a
}

/// Velocity-lag transition and input matrix with time constant `tau`.
pub fn lag_model(dt: f64, tau: f64) -> (Mat, Mat) {
    let e = (-dt / tau).exp();
    let mut a = ca_transition(dt);
    a[2][2] = e;
    a[3][3] = e;
    let mut b = zeros(6, 2);
    b[2][0] = 1.0 - e;
    b[3][1] = 1.0 - e;
    (a, b)
}

/// Selects the state pair starting at `offset`.
pub fn selector(offset: usize) -> Mat {
    let mut h = zeros(2, 6);
    h[0][offset] = 1.0;
    h[1][offset + 1] = 1.0;
    h
}

pub fn predict(x: &[f64], p: &Mat, a: &Mat, input: Option<(&Mat, &[f64])>, q: &[f64]) -> (Vec<f64>, Mat) {
    let mut next = mul_vec(a, x);
    if let Some((b, u)) = input {
        for (n, bu) in next.iter_mut().zip(mul_vec(b, u)) {
            *n += bu;
        }
    }
    let cov = add(&mul(&mul(a, p), &transpose(a)), &diag(q));
    (next, symmetrize(&cov))
}

pub fn correct(x: &[f64], p: &Mat, h: &Mat, r: &Mat, z: &[f64]) -> (Vec<f64>, Mat) {
    let ht = transpose(h);
    let s = add(&mul(&mul(h, p), &ht), r);
    let k = mul(&mul(p, &ht), &inverse2(&s));
    let hx = mul_vec(h, x);
    let innovation: Vec<f64> = z.iter().zip(&hx).map(|(a, b)| a - b).collect();
    let dx = mul_vec(&k, &innovation);
    let next: Vec<f64> = x.iter().zip(dx).map(|(a, b)| a + b).collect();
    let cov = sub(p, &mul(&mul(&k, h), p));
    (next, symmetrize(&cov))
}
