//! Covering numbers, a chain, the chaining bound and covering exponents.

use sheclt::entropy::*;
use sheclt::noise::RngStream;

fn main() -> sheclt::Result<()> {
    let space = FiniteMetricSpace::brownian_grid(16)?;
    for r in [0.2, 0.4, 0.8] {
        let s = sandwich_check(&space, r)?;
        println!("r = {r}: N(2r) = {} <= P(r) = {} <= N(r/2) = {}", s.cover_double, s.packing, s.cover_half);
    }
    let chain = chain_construct(&space)?;
    println!("net sizes {:?}, chain of 7: {:?}", chain.nets.iter().map(Vec::len).collect::<Vec<_>>(), chain.chain_of(7));

    let check = chaining_empirical_check(&space, 0.5, 1000, RngStream::new(1, 0, 0, 0))?;
    println!("E max increment {:.3} <= bound {:.3}", check.empirical, check.bound);

    let boxes = FunctionClass::Box { m: 1.0, dimension: 1 }.sample(20_001)?;
    let est = covering_exponent(&boxes, &[0.03, 0.05, 0.1, 0.2])?;
    println!("indicator boxes: counts {:?}, slope {:.3}", est.counts, est.slope);
    Ok(())
}
