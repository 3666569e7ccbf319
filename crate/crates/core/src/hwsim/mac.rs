use crate::fixedpoint::{fx_sigmoid, Fx32, SigmoidLut};
use crate::netcore::ConvParams;

/// Arithmetic units shared by all stages, with a running count of
/// saturation events seen by the adders and multipliers.
#[derive(Debug)]
pub struct Datapath<'a> {
    lut: &'a SigmoidLut,
    saturations: u64,
}

impl<'a> Datapath<'a> {
    pub fn new(lut: &'a SigmoidLut) -> Self {
        Datapath { lut, saturations: 0 }
    }

    pub fn saturations(&self) -> u64 {
        self.saturations
    }

    pub fn mul(&mut self, a: Fx32, b: Fx32) -> Fx32 {
        let (v, sat) = a.mul_sat(b);
        self.saturations += sat as u64;
        v
    }

    pub fn add(&mut self, a: Fx32, b: Fx32) -> Fx32 {
        let (v, sat) = a.add_sat(b);
        self.saturations += sat as u64;
        v
    }

    /// Four parallel multipliers, a two-level adder tree, then the bias adder.
    pub fn mac_fire(&mut self, taps: &[[Fx32; 2]; 2], p: &ConvParams<Fx32>) -> Fx32 {
        let m0 = self.mul(taps[0][0], p.kernel[0][0]);
        let m1 = self.mul(taps[0][1], p.kernel[0][1]);
        let m2 = self.mul(taps[1][0], p.kernel[1][0]);
        let m3 = self.mul(taps[1][1], p.kernel[1][1]);
        let left = self.add(m0, m1);
        let right = self.add(m2, m3);
        let sum = self.add(left, right);
        self.add(sum, p.bias)
    }

    pub fn activate(&self, x: Fx32) -> Fx32 {
        fx_sigmoid(x, self.lut)
    }
}

/// Conv MAC without saturation bookkeeping.
pub fn mac_fire(taps: &[[Fx32; 2]; 2], p: &ConvParams<Fx32>) -> Fx32 {
    Datapath::new(SigmoidLut::shared()).mac_fire(taps, p)
}
