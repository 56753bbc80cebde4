use crate::nn::matrix::Matrix;

/// Named, flat views over the trainable arrays of a parameter container.
///
/// Gradients are stored in a value of the same type, so two containers of the
/// same shape visit their arrays in the same order.
pub trait Parameters {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, &'a [f64]));

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64]));

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, s| n += s.len());
        n
    }

    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.visit(&mut |_, s| out.extend_from_slice(s));
        out
    }

    /// Overwrites every array from a flat buffer produced by [`Parameters::flatten`].
    fn assign_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        self.visit_mut(&mut |_, s| {
            s.copy_from_slice(&flat[offset..offset + s.len()]);
            offset += s.len();
        });
        assert_eq!(offset, flat.len(), "flat buffer length mismatch");
    }

    fn fill_zero(&mut self) {
        self.visit_mut(&mut |_, s| s.iter_mut().for_each(|v| *v = 0.0));
    }

    fn zeros_like(&self) -> Self
    where
        Self: Clone + Sized,
    {
        let mut z = self.clone();
        z.fill_zero();
        z
    }

    /// Order-sensitive FNV-1a digest of the raw bits; used to detect any change.
    fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        self.visit(&mut |_, s| {
            for v in s {
                h ^= v.to_bits();
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        });
        h
    }
}

impl Parameters for Matrix {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, &'a [f64])) {
        f("", self.data());
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        f("", self.data_mut());
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    match (prefix.is_empty(), name.is_empty()) {
        (true, _) => name.to_string(),
        (_, true) => prefix.to_string(),
        _ => format!("{prefix}.{name}"),
    }
}

/// Visits `child` with every reported name prefixed by `prefix`.
pub(crate) fn visit_child<'a, P: Parameters + ?Sized>(
    prefix: &str,
    child: &'a P,
    f: &mut dyn FnMut(&str, &'a [f64]),
) {
    child.visit(&mut |name, s| f(&join(prefix, name), s));
}

pub(crate) fn visit_child_mut<P: Parameters + ?Sized>(
    prefix: &str,
    child: &mut P,
    f: &mut dyn FnMut(&str, &mut [f64]),
) {
    child.visit_mut(&mut |name, s| f(&join(prefix, name), s));
}

/// `dst += src` over two containers of identical shape.
pub fn accumulate<P: Parameters>(dst: &mut P, src: &P) {
    let flat = src.flatten();
    let mut offset = 0;
    dst.visit_mut(&mut |_, s| {
        let n = s.len();
        for (d, v) in s.iter_mut().zip(&flat[offset..offset + n]) {
            *d += v;
        }
        offset += n;
    });
}

/// Multiplies every entry by `c`.
pub fn scale<P: Parameters>(p: &mut P, c: f64) {
    p.visit_mut(&mut |_, s| s.iter_mut().for_each(|v| *v *= c));
}
