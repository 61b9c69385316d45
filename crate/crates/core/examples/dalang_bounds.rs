//! Υ(λ) for each covariance family and the inverse Λ(Υ(λ)) round trip.

use sheclt::spectral::{CovarianceMeasure, DalangProfile};

fn main() -> sheclt::Result<()> {
    let families = [
        CovarianceMeasure::dirac(1, 1.0)?,
        CovarianceMeasure::gaussian(2, 1.0, 0.5)?,
        CovarianceMeasure::uniform_box(1, 1.0, 0.25)?,
        CovarianceMeasure::exponential(3, 2.0, 1.5)?,
    ];
    println!("{:<12} {:>3} {:>8} {:>14} {:>14}", "kind", "d", "lambda", "upsilon", "inverse");
    for f in families {
        let p = DalangProfile::new(f)?;
        for lambda in [0.1, 1.0, 10.0] {
            let u = p.upsilon(lambda)?;
            println!("{:<12} {:>3} {:>8} {:>14.8} {:>14.8}", f.name(), f.dimension, lambda, u, p.lambda_of(u)?);
        }
    }
    // White noise in d = 2 has no Dalang integral.
    let err = DalangProfile::new(CovarianceMeasure::dirac(2, 1.0)?).unwrap_err();
    println!("dirac, d = 2: {err}");
    Ok(())
}
