//! Bjontegaard rate difference with cubic polynomial fits.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RdPoint {
    pub bpp: f64,
    pub quality: f64,
}

/// Least-squares cubic `log2(bpp) = p(t)`, `t = (quality - c) / s`.
fn fit(points: &[RdPoint], c: f64, s: f64) -> Result<[f64; 4]> {
    let n = points.len();
    let a = DMatrix::from_fn(n, 4, |i, j| ((points[i].quality - c) / s).powi(j as i32));
    let b = DVector::from_iterator(n, points.iter().map(|p| p.bpp.log2()));
    let sol = a
        .svd(true, true)
        .solve(&b, 1e-12)
        .map_err(|e| invalid(format!("cubic fit failed: {e}")))?;
    Ok([sol[0], sol[1], sol[2], sol[3]])
}

fn integral(p: &[f64; 4], lo: f64, hi: f64) -> f64 {
    let prim = |t: f64| p[0] * t + p[1] * t * t / 2.0 + p[2] * t.powi(3) / 3.0 + p[3] * t.powi(4) / 4.0;
    prim(hi) - prim(lo)
}

fn validate(name: &str, pts: &[RdPoint]) -> Result<(f64, f64)> {
    if pts.len() < 4 {
        return Err(invalid(format!("{name} curve has {} points, at least 4 needed", pts.len())));
    }
    if pts.iter().any(|p| !(p.bpp > 0.0) || !p.bpp.is_finite() || !p.quality.is_finite()) {
        return Err(invalid(format!("{name} curve has a non-finite point or bpp <= 0")));
    }
    let mut q: Vec<f64> = pts.iter().map(|p| p.quality).collect();
    q.sort_by(f64::total_cmp);
    q.dedup();
    if q.len() < 4 {
        return Err(invalid(format!("{name} curve has fewer than 4 distinct quality values")));
    }
    Ok((q[0], q[q.len() - 1]))
}

/// Average rate change of `test` against `anchor` at equal quality, in
/// percent: `100 * (2^d - 1)` with `d` the mean log2-rate difference over
/// the shared quality range.
pub fn bd_rate(anchor: &[RdPoint], test: &[RdPoint]) -> Result<f64> {
    let (alo, ahi) = validate("anchor", anchor)?;
    let (tlo, thi) = validate("test", test)?;
    let (lo, hi) = (alo.max(tlo), ahi.min(thi));
    if lo >= hi {
        return Err(invalid(format!(
            "quality ranges [{alo}, {ahi}] and [{tlo}, {thi}] do not overlap"
        )));
    }
    let all = anchor.iter().chain(test);
    let n = (anchor.len() + test.len()) as f64;
    let c = all.clone().map(|p| p.quality).sum::<f64>() / n;
    let s = (all.map(|p| (p.quality - c).powi(2)).sum::<f64>() / n).sqrt().max(1e-12);
    let pa = fit(anchor, c, s)?;
    let pt = fit(test, c, s)?;
    let (tl, th) = ((lo - c) / s, (hi - c) / s);
    let d = (integral(&pt, tl, th) - integral(&pa, tl, th)) / (th - tl);
    Ok(100.0 * (d.exp2() - 1.0))
}
