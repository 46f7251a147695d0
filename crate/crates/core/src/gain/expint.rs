//! Exponential integral `E1(v) = \int_v^\infty e^{-t}/t dt` for `v > 0`.

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Power series below 1, continued fraction (modified Lentz) from 1 up.
/// Returns `+inf` at 0 and NaN for negative or NaN input.
pub fn e1(v: f64) -> f64 {
    if v.is_nan() || v < 0.0 {
        return f64::NAN;
    }
    if v == 0.0 {
        return f64::INFINITY;
    }
    if v.is_infinite() {
        return 0.0;
    }
    if v < 1.0 {
        series(v)
    } else {
        continued_fraction(v)
    }
}

fn series(v: f64) -> f64 {
    // E1(v) = -gamma - ln v - sum_{k>=1} (-v)^k / (k k!)
    let mut sum = 0.0;
    let mut term = 1.0;
    for k in 1..200 {
        let kf = k as f64;
        term *= -v / kf;
        let add = term / kf;
        sum += add;
        if add.abs() < 1e-17 * sum.abs() {
            break;
        }
    }
    -EULER_GAMMA - v.ln() - sum
}

fn continued_fraction(v: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = v + 1.0;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..500 {
        let a = -((i * i) as f64);
        b += 2.0;
        d = 1.0 / (a * d + b);
        c = b + a / c;
        let delta = c * d;
        h *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    h * (-v).exp()
}
