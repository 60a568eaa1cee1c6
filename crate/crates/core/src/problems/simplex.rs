use crate::{AfpError, Result, Vector};

/// Euclidean projection onto the probability simplex by sorting and
/// thresholding.
pub fn simplex_project(v: &Vector) -> Result<Vector> {
    if v.is_empty() {
        return Err(AfpError::InvalidInput("cannot project an empty vector".into()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(AfpError::InvalidInput("non-finite entry in projection input".into()));
    }
    let mut out = vec![0.0; v.len()];
    simplex_project_into(v.as_slice(), &mut out);
    Ok(Vector::from_vec(out))
}

/// Unchecked projection of `v` into `out`; inputs must be finite.
pub fn simplex_project_into(v: &[f64], out: &mut [f64]) {
    let mut u = v.to_vec();
    u.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cum += uj;
        let t = (cum - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    for (o, &x) in out.iter_mut().zip(v) {
        *o = (x - theta).max(0.0);
    }
}
