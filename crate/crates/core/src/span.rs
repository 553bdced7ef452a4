//! Orthonormal-basis utilities over signals (modified Gram-Schmidt and
//! span projections), shared by affine-subspace sets and the built-in
//! denoisers.

use crate::signal::{inner, norm2, Signal};

/// Modified Gram-Schmidt. Vectors that are (numerically) dependent on the
/// earlier ones are dropped rather than kept as noise directions.
pub fn orthonormalize(vectors: &[Signal]) -> Vec<Signal> {
    let mut basis: Vec<Signal> = Vec::with_capacity(vectors.len());
    for v in vectors {
        let mut w = v.clone();
        for b in &basis {
            let coef = inner(&w, b).expect("spanning vectors share a shape");
            w = w.axpy(-coef, b);
        }
        let n = norm2(&w);
        if n > 1e-12 * (1.0 + norm2(v)) {
            basis.push(w.scale(1.0 / n));
        }
    }
    basis
}

/// Orthogonal projection onto the span of an orthonormal basis.
pub fn project_span(basis: &[Signal], x: &Signal) -> Signal {
    let mut out = Signal::zeros_like(x);
    for b in basis {
        let coef = inner(x, b).expect("basis shape matches input");
        out = out.axpy(coef, b);
    }
    out
}

/// Max deviation of Gram matrix entries from the identity.
pub fn orthonormality_defect(basis: &[Signal]) -> f64 {
    let mut worst = 0.0f64;
    for (i, a) in basis.iter().enumerate() {
        for (j, b) in basis.iter().enumerate() {
            let g = inner(a, b).expect("common shape");
            let want = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g - want).abs());
        }
    }
    worst
}
