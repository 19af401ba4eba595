use crate::linalg::DMat;
use crate::scalar::Real;

/// Four-stage ESDIRK tableau with an explicit first stage.
#[derive(Debug, Clone, PartialEq)]
pub struct ButcherTableau<T> {
    pub gamma: T,
    pub a: [[T; 4]; 4],
    /// Propagating weights, equal to the last row of `a`.
    pub b: [T; 4],
    /// Embedded weights of the fourth-order companion.
    pub b_hat: [T; 4],
    pub c: [T; 4],
    /// Error weights `b - b̂`.
    pub d: [T; 4],
}

pub const STAGES: usize = 4;

/// ESDIRK3(4): stiffly accurate, L-stable, third order with a fourth-order
/// embedded solution.
///
/// `γ` is the root of `6γ³ - 18γ² + 9γ - 1` in `(1/3, 1/2)`, which makes the
/// stability function vanish at infinity.
pub fn esdirk_tableau<T: Real>() -> ButcherTableau<T> {
    let g = T::lit(0.435_866_521_508_458_999_416_019_451_193_556_8);
    let z = T::zero();
    let a = [
        [z, z, z, z],
        [g, g, z, z],
        [
            T::lit(0.140_737_774_724_706_196_186_413_2),
            T::lit(-0.108_365_551_381_320_799_978_225_3),
            g,
            z,
        ],
        [
            T::lit(0.102_399_400_619_910_997_682_279_4),
            T::lit(-0.376_878_452_255_556_106_088_697_1),
            T::lit(0.838_612_530_127_186_108_990_398_2),
            g,
        ],
    ];
    let b = a[3];
    let b_hat = [
        T::lit(0.157_024_897_860_324_937_100_788_6),
        T::lit(0.117_330_441_370_438_848_696_818_4),
        T::lit(0.616_678_030_392_121_464_348_388_1),
        T::lit(0.108_966_630_377_114_749_854_004_9),
    ];
    let c = [
        z,
        T::lit(0.871_733_043_016_917_998_832_038_9),
        T::lit(0.468_238_744_851_844_395_624_207_4),
        T::one(),
    ];
    let d = [
        b[0] - b_hat[0],
        b[1] - b_hat[1],
        b[2] - b_hat[2],
        b[3] - b_hat[3],
    ];
    ButcherTableau {
        gamma: g,
        a,
        b,
        b_hat,
        c,
        d,
    }
}

impl<T: Real> ButcherTableau<T> {
    /// `R(z) = 1 + z bᵀ (I - zA)⁻¹ 1` for real `z`.
    pub fn stability_function(&self, z: T) -> T {
        let m = DMat::from_fn(STAGES, STAGES, |i, j| {
            let id = if i == j { T::one() } else { T::zero() };
            id - z * self.a[i][j]
        });
        let mut k = vec![T::one(); STAGES];
        match m.lu() {
            Ok(lu) => lu.solve_in_place(&mut k),
            Err(_) => return T::nan(),
        }
        T::one() + z * (0..STAGES).map(|i| self.b[i] * k[i]).sum::<T>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sum(f: impl Fn(usize) -> f64) -> f64 {
        (0..STAGES).map(f).sum()
    }

    #[test]
    fn structure() {
        let t = esdirk_tableau::<f64>();
        for i in 0..STAGES {
            assert_relative_eq!(sum(|j| t.a[i][j]), t.c[i], epsilon = 1e-15);
            for j in i + 1..STAGES {
                assert_eq!(t.a[i][j], 0.0);
            }
        }
        for i in 1..STAGES {
            assert_eq!(t.a[i][i], t.gamma);
        }
        assert_eq!(t.a[0][0], 0.0);
        assert_eq!(t.b, t.a[3]);
        let g = t.gamma;
        assert!((6.0 * g * g * g - 18.0 * g * g + 9.0 * g - 1.0).abs() < 1e-15);
    }

    #[test]
    fn third_order_conditions() {
        let t = esdirk_tableau::<f64>();
        let (a, b, c) = (t.a, t.b, t.c);
        assert!((sum(|i| b[i]) - 1.0).abs() < 1e-14);
        assert!((sum(|i| b[i] * c[i]) - 0.5).abs() < 1e-14);
        assert!((sum(|i| b[i] * c[i] * c[i]) - 1.0 / 3.0).abs() < 1e-14);
        assert!((sum(|i| b[i] * sum(|j| a[i][j] * c[j])) - 1.0 / 6.0).abs() < 1e-14);
    }

    #[test]
    fn embedded_solution_is_fourth_order() {
        let t = esdirk_tableau::<f64>();
        let (a, bh, c) = (t.a, t.b_hat, t.c);
        let ac = |i: usize| sum(|j| a[i][j] * c[j]);
        let conditions = [
            sum(|i| bh[i]) - 1.0,
            sum(|i| bh[i] * c[i]) - 0.5,
            sum(|i| bh[i] * c[i] * c[i]) - 1.0 / 3.0,
            sum(|i| bh[i] * ac(i)) - 1.0 / 6.0,
            sum(|i| bh[i] * c[i].powi(3)) - 0.25,
            sum(|i| bh[i] * c[i] * ac(i)) - 0.125,
            sum(|i| bh[i] * sum(|j| a[i][j] * c[j] * c[j])) - 1.0 / 12.0,
            sum(|i| bh[i] * sum(|j| a[i][j] * ac(j))) - 1.0 / 24.0,
        ];
        for (k, r) in conditions.iter().enumerate() {
            assert!(r.abs() < 1e-14, "condition {k}: residual {r}");
        }
    }

    #[test]
    fn l_stable() {
        let t = esdirk_tableau::<f64>();
        assert!(t.stability_function(-1e6).abs() < 1e-3);
        for k in 0..200 {
            let z = -(k as f64) * 0.5;
            assert!(t.stability_function(z).abs() <= 1.0 + 1e-14);
        }
        assert_relative_eq!(
            t.stability_function(-1e-3),
            (-1e-3f64).exp(),
            max_relative = 1e-11
        );
    }
}
