//! Minimal double-double arithmetic (unevaluated sums `hi + lo`), enough to
//! sum alternating series whose terms dwarf the result.

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Dd {
    pub hi: f64,
    pub lo: f64,
}

#[inline]
fn two_sum(a: f64, b: f64) -> Dd {
    let s = a + b;
    let bb = s - a;
    let e = (a - (s - bb)) + (b - bb);
    Dd { hi: s, lo: e }
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> Dd {
    let s = a + b;
    Dd {
        hi: s,
        lo: b - (s - a),
    }
}

#[inline]
fn two_prod(a: f64, b: f64) -> Dd {
    let p = a * b;
    Dd {
        hi: p,
        lo: a.mul_add(b, -p),
    }
}

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };

    pub fn from_f64(x: f64) -> Self {
        Dd { hi: x, lo: 0.0 }
    }

    /// `a + b` carried exactly.
    pub fn sum_of(a: f64, b: f64) -> Self {
        two_sum(a, b)
    }

    pub fn add(self, o: Dd) -> Dd {
        let s = two_sum(self.hi, o.hi);
        let t = two_sum(self.lo, o.lo);
        let r = quick_two_sum(s.hi, s.lo + t.hi);
        quick_two_sum(r.hi, r.lo + t.lo)
    }

    pub fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }

    pub fn sub(self, o: Dd) -> Dd {
        self.add(o.neg())
    }

    pub fn mul_f64(self, b: f64) -> Dd {
        let p = two_prod(self.hi, b);
        quick_two_sum(p.hi, p.lo + self.lo * b)
    }

    pub fn div(self, o: Dd) -> Dd {
        let q1 = self.hi / o.hi;
        let r = self.sub(o.mul_f64(q1));
        let q2 = r.hi / o.hi;
        let r = r.sub(o.mul_f64(q2));
        let q3 = r.hi / o.hi;
        quick_two_sum(q1, q2).add(Dd::from_f64(q3))
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_cancelled_digits() {
        // (1 + 2^-60) - 1 is lost in f64 but kept here.
        let a = Dd::sum_of(1.0, 2f64.powi(-60));
        assert_eq!(a.sub(Dd::from_f64(1.0)).to_f64(), 2f64.powi(-60));
        let third = Dd::from_f64(1.0).div(Dd::from_f64(3.0));
        let back = third.mul_f64(3.0).sub(Dd::from_f64(1.0)).to_f64();
        assert!(back.abs() < 1e-31);
    }

    #[test]
    fn alternating_exponential() {
        // e^-20 by its Taylor series: terms reach 4.3e7.
        let x = 20.0;
        let mut term = Dd::from_f64(1.0);
        let mut sum = term;
        for n in 1..200 {
            term = term.mul_f64(-x).div(Dd::from_f64(n as f64));
            sum = sum.add(term);
        }
        assert!((sum.to_f64() / (-x).exp() - 1.0).abs() < 1e-12);
    }
}
