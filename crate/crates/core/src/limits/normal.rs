//! Standard normal law.

use std::f64::consts::{PI, SQRT_2};

use libm::erfc;

use super::LimitError;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Upper tail `1 - Phi(x)` without cancellation.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * erfc(x / SQRT_2)
}

/// Inverse of [`normal_cdf`]: rational initial guess, then Halley steps
/// against the erfc-based CDF.
pub fn normal_quantile(u: f64) -> Result<f64, LimitError> {
    if !(u > 0.0 && u < 1.0) {
        return Err(LimitError::LevelOutOfRange(u));
    }
    if u == 0.5 {
        return Ok(0.0);
    }
    if u > 0.5 {
        // Work in the lower tail where 1 - u carries full relative precision.
        return Ok(-lower_quantile(1.0 - u));
    }
    Ok(lower_quantile(u))
}

fn lower_quantile(u: f64) -> f64 {
    let mut x = initial_guess(u);
    for _ in 0..3 {
        let e = normal_cdf(x) - u;
        let d = e / normal_pdf(x);
        if !d.is_finite() {
            break;
        }
        x -= d / (1.0 + 0.5 * x * d);
    }
    x
}

fn initial_guess(u: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    if u < 0.02425 {
        let q = (-2.0 * u.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else {
        let q = u - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    }
}

/// `E (x - Z)^+ = x Phi(x) + phi(x)`.
pub fn normal_lower_partial(x: f64) -> f64 {
    if x < -5.0 {
        // x Phi(x) + phi(x) cancels badly far left; use the upper partial of -x.
        normal_upper_partial(-x)
    } else {
        x * normal_cdf(x) + normal_pdf(x)
    }
}

/// `E (Z - x)^+ = phi(x) - x (1 - Phi(x))`.
pub fn normal_upper_partial(x: f64) -> f64 {
    if x > 5.0 {
        // Mills-ratio continued fraction keeps relative accuracy in the far tail.
        let mut cf = x;
        for k in (1..=60).rev() {
            cf = x + k as f64 / cf;
        }
        let mills = 1.0 / cf;
        normal_pdf(x) * (1.0 - x * mills)
    } else {
        normal_pdf(x) - x * normal_sf(x)
    }
}

/// `E |Z| = sqrt(2/pi)`.
pub fn normal_mean_abs() -> f64 {
    (2.0 / PI).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    // 50-digit reference values (independently computed in multiprecision).
    const CDF_TABLE: [(&str, &str); 14] = [
        (
            "-8",
            "6.2209605742717841235159951725881884224887172789003e-16",
        ),
        (
            "-5",
            "0.00000028665157187919391167375233287464535385442301361189",
        ),
        (
            "-3",
            "0.0013498980316300945266518147675949773778293681583806",
        ),
        (
            "-2",
            "0.022750131948179207200282637166533437471776223701678",
        ),
        (
            "-1.5",
            "0.066807201268858066004494040979886079522895185661221",
        ),
        ("-1", "0.1586552539314570514147674543679620775220870332734"),
        (
            "-0.5",
            "0.30853753872598689636229538939166226011639782444542",
        ),
        (
            "-0.1",
            "0.46017216272297101633106609229787264718876340257014",
        ),
        ("0", "0.5"),
        ("0.3", "0.6179114221889526330722736227637767387836876972259"),
        ("1", "0.8413447460685429485852325456320379224779129667266"),
        ("2", "0.97724986805182079279971736283346656252822377629832"),
        (
            "3.5",
            "0.99976737092096447496365007411327201522645125066411",
        ),
        ("6", "0.99999999901341235496230185929913586760195798133021"),
    ];
    const QUANTILE_TABLE: [(&str, &str); 11] = [
        (
            "1e-10",
            "-6.3613409024040562046953758282652216792039373509158",
        ),
        (
            "1e-5",
            "-4.2648907939228246284985246989063446293560532226955",
        ),
        (
            "0.001",
            "-3.0902323061678135415403998301073792054910084918658",
        ),
        (
            "0.025",
            "-1.9599639845400542355245944305205515279555500778695",
        ),
        (
            "0.1",
            "-1.2815515655446004669651033294487428186199078243526",
        ),
        (
            "0.3",
            "-0.52440051270804078403828932502512255432537803544998",
        ),
        ("0.5", "0.0"),
        (
            "0.7",
            "0.52440051270804078403828932502512255432537803544998",
        ),
        (
            "0.975",
            "1.9599639845400542355245944305205515279555500778695",
        ),
        (
            "0.999",
            "3.0902323061678135415403998301073792054910084918658",
        ),
        (
            "0.999999",
            "4.753424308822898948193988187004275005642233726827",
        ),
    ];

    #[test]
    fn cdf_matches_reference_table() {
        for (x, v) in CDF_TABLE {
            let x: f64 = x.parse().unwrap();
            let v: f64 = v.parse().unwrap();
            assert!((normal_cdf(x) - v).abs() < 1e-9, "cdf({x})");
            assert!(
                (normal_cdf(x) - v).abs() <= 1e-14 * v.max(1e-300) + 1e-16,
                "cdf({x}) relative"
            );
        }
    }

    #[test]
    fn quantile_matches_reference_table() {
        for (u, v) in QUANTILE_TABLE {
            let u: f64 = u.parse().unwrap();
            let v: f64 = v.parse().unwrap();
            // Levels near 1 are rounded when parsed, which moves the quantile by ~1e-12.
            assert!(
                (normal_quantile(u).unwrap() - v).abs() < 1e-9,
                "quantile({u})"
            );
        }
    }

    #[test]
    fn spec_examples() {
        assert_eq!(normal_quantile(0.5).unwrap(), 0.0);
        assert_eq!(normal_cdf(0.0), 0.5);
        assert!((normal_quantile(0.975).unwrap() - 1.959964).abs() < 1e-6);
        assert!(normal_quantile(0.0).is_err());
        assert!(normal_quantile(1.0).is_err());
    }

    #[test]
    fn partial_expectations() {
        assert!((normal_lower_partial(0.0) - INV_SQRT_2PI).abs() < 1e-15);
        for &x in &[-7.0, -3.0, -0.4, 0.0, 1.3, 4.0, 6.5] {
            // E(Z - x)^+ - E(x - Z)^+ = -x
            assert!((normal_upper_partial(x) - normal_lower_partial(x) + x).abs() < 1e-13);
        }
        assert!(normal_upper_partial(8.0) > 0.0 && normal_upper_partial(8.0) < 1e-15);
    }
}
