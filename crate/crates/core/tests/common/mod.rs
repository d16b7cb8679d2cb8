//! Small dense-matrix helpers for brute-force oracles. Deliberately naive and
//! independent of the library's linear algebra.

#![allow(dead_code)]

pub type Dense = Vec<Vec<f64>>;

pub fn zeros(r: usize, c: usize) -> Dense {
    vec![vec![0.0; c]; r]
}

pub fn eye(n: usize) -> Dense {
    let mut m = zeros(n, n);
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    m
}

pub fn transpose(a: &Dense) -> Dense {
    let (r, c) = (a.len(), a[0].len());
    let mut t = zeros(c, r);
    for i in 0..r {
        for j in 0..c {
            t[j][i] = a[i][j];
        }
    }
    t
}

pub fn mul(a: &Dense, b: &Dense) -> Dense {
    let (n, m, p) = (a.len(), b.len(), b[0].len());
    assert_eq!(a[0].len(), m);
    let mut c = zeros(n, p);
    for i in 0..n {
        for j in 0..p {
            let mut s = 0.0;
            for k in 0..m {
                s += a[i][k] * b[k][j];
            }
            c[i][j] = s;
        }
    }
    c
}

pub fn sub(a: &Dense, b: &Dense) -> Dense {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(u, v)| u - v).collect())
        .collect()
}

pub fn scale(a: &Dense, s: f64) -> Dense {
    a.iter().map(|r| r.iter().map(|v| v * s).collect()).collect()
}

/// Gauss-Jordan inverse with partial pivoting.
pub fn inv(a: &Dense) -> Dense {
    let n = a.len();
    let mut m: Dense = a
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut row = r.clone();
            row.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            row
        })
        .collect();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&x, &y| m[x][col].abs().partial_cmp(&m[y][col].abs()).unwrap())
            .unwrap();
        m.swap(col, piv);
        let d = m[col][col];
        assert!(d.abs() > 1e-300, "singular");
        for v in m[col].iter_mut() {
            *v /= d;
        }
        for r in 0..n {
            if r != col {
                let f = m[r][col];
                if f != 0.0 {
                    for c in 0..2 * n {
                        m[r][c] -= f * m[col][c];
                    }
                }
            }
        }
    }
    m.into_iter().map(|r| r[n..].to_vec()).collect()
}

/// Textbook Cholesky–Banachiewicz, returning upper `U` with `A = U'U`.
pub fn chol_upper(a: &Dense) -> Dense {
    let n = a.len();
    let mut l = zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                assert!(s > 0.0, "not positive definite");
                l[i][j] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    transpose(&l)
}

pub fn col(v: &[f64]) -> Dense {
    v.iter().map(|x| vec![*x]).collect()
}

pub fn max_abs_diff(a: &Dense, b: &Dense) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(u, v)| (u - v).abs()))
        .fold(0.0, f64::max)
}

pub fn max_abs(a: &Dense) -> f64 {
    a.iter().flatten().fold(0.0, |m: f64, v| m.max(v.abs()))
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}

/// Fourier basis evaluated directly from its definition.
pub fn fourier(t: usize, k: usize) -> Dense {
    let mut m = zeros(t, k);
    for i in 0..t {
        let r = (i + 1) as f64 / t as f64;
        for j in 0..k {
            let freq = (j / 2 + 1) as f64;
            let arg = 2.0 * std::f64::consts::PI * freq * r;
            m[i][j] = std::f64::consts::SQRT_2 * if j % 2 == 0 { arg.cos() } else { arg.sin() };
        }
    }
    m
}

/// Dense kernel matrix from its entrywise definition.
pub fn kernel(t: usize, lambda: f64, kb: usize) -> Dense {
    let mut c = zeros(t, t);
    for i in 0..t {
        for j in 0..t {
            let same1 = i < kb && j < kb;
            let same2 = i >= kb && j >= kb;
            let eq = if i == j { t as f64 } else { 0.0 };
            c[i][j] = if same1 {
                (eq - 1.0 / lambda) / (lambda * lambda)
            } else if same2 {
                let w = 1.0 - lambda;
                (eq - 1.0 / w) / (w * w)
            } else {
                0.0
            };
        }
    }
    c
}
