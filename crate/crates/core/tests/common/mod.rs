//! Brute-force oracles shared by the integration tests.
#![allow(dead_code)]

/// P(x=1) for a DINA item written out directly from the definition.
pub fn dina_p(s: f64, g: f64, alpha: [u8; 2], q: &[u8]) -> f64 {
    let eta = q.iter().zip(alpha).all(|(&qk, a)| qk == 0 || a == 1);
    if eta {
        1.0 - s
    } else {
        g
    }
}

pub const PROFILES: [[u8; 2]; 4] = [[0, 0], [1, 0], [0, 1], [1, 1]];

pub fn brute_loglik(x: &[&[u8]], q: &[&[u8]], s: &[f64], g: &[f64], pi: &[f64]) -> f64 {
    x.iter()
        .map(|row| {
            let lik: f64 = PROFILES
                .iter()
                .zip(pi)
                .map(|(&a, &w)| {
                    w * row
                        .iter()
                        .enumerate()
                        .map(|(j, &xj)| {
                            let p = dina_p(s[j], g[j], a, q[j]);
                            if xj == 1 {
                                p
                            } else {
                                1.0 - p
                            }
                        })
                        .product::<f64>()
                })
                .sum();
            lik.ln()
        })
        .sum()
}

/// Block-coordinate lattice search over every DINA parameter and the class
/// probabilities, refined on a finer local lattice.
pub fn lattice_oracle(x: &[&[u8]], q: &[&[u8]], floor: f64) -> f64 {
    let j_count = q.len();
    let mut s = vec![0.2; j_count];
    let mut g = vec![0.2; j_count];
    let mut pi = vec![0.25; 4];
    let mut best = brute_loglik(x, q, &s, &g, &pi);
    let lattice = |center: f64, half: f64, step: f64| -> Vec<f64> {
        let mut v: Vec<f64> = Vec::new();
        let mut t = (center - half).max(0.0);
        while t <= (center + half).min(1.0) + 1e-12 {
            v.push(t.clamp(floor, 1.0 - floor));
            t += step;
        }
        v.push(floor);
        v.push(1.0 - floor);
        v
    };
    for (half, step, simplex_step) in [(1.0, 0.005, 0.01), (0.01, 0.0005, 0.001), (0.001, 0.00005, 0.0001)] {
        loop {
            let before = best;
            for j in 0..j_count {
                let (s0, g0) = (s[j], g[j]);
                let mut pair = (s0, g0);
                for &sv in &lattice(s0, half, step) {
                    for &gv in &lattice(g0, half, step) {
                        s[j] = sv;
                        g[j] = gv;
                        let v = brute_loglik(x, q, &s, &g, &pi);
                        if v > best {
                            best = v;
                            pair = (sv, gv);
                        }
                    }
                }
                s[j] = pair.0;
                g[j] = pair.1;
            }
            // class probabilities on a simplex lattice around the current point
            let base = pi.clone();
            let coarse = simplex_step == 0.01;
            let (lo, hi): (i64, i64) = if coarse { (0, 100) } else { (-20, 20) };
            let at = |c: usize, d: i64| if coarse { d as f64 * simplex_step } else { base[c] + d as f64 * simplex_step };
            let mut cand = base.clone();
            let mut b = best;
            for d0 in lo..=hi {
                for d1 in lo..=hi {
                    for d2 in lo..=hi {
                        let (p0, p1, p2) = (at(0, d0), at(1, d1), at(2, d2));
                        let p3 = 1.0 - p0 - p1 - p2;
                        if p0 < 0.0 || p1 < 0.0 || p2 < 0.0 || p3 < -1e-12 {
                            continue;
                        }
                        let trial = [p0, p1, p2, p3.max(0.0)];
                        let v = brute_loglik(x, q, &s, &g, &trial);
                        if v > b {
                            b = v;
                            cand = trial.to_vec();
                        }
                    }
                }
            }
            pi = cand;
            best = b;
            if best - before < 1e-9 {
                break;
            }
        }
    }
    best
}
