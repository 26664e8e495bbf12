use std::fmt;

use super::NumericsError;

/// Element type of a [`Tensor`].
///
/// Values are held in `f64` storage; an `F32` tensor rounds every element to
/// the nearest `f32` whenever it is produced, so results are exactly what an
/// f32 store would hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    #[inline]
    pub fn round(self, x: f64) -> f64 {
        match self {
            DType::F32 => x as f32 as f64,
            DType::F64 => x,
        }
    }

    /// Wire code shared by the shard and checkpoint formats.
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 1,
            DType::F64 => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<DType> {
        match code {
            1 => Some(DType::F32),
            2 => Some(DType::F64),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::F64 => "f64",
        }
    }

    pub fn parse(s: &str) -> Option<DType> {
        match s {
            "f32" | "float32" => Some(DType::F32),
            "f64" | "float64" => Some(DType::F64),
            _ => None,
        }
    }

    pub fn size_of(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Dense row-major array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    dtype: DType,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, NumericsError> {
        Self::with_dtype(shape, data, DType::F64)
    }

    pub fn with_dtype(shape: Vec<usize>, mut data: Vec<f64>, dtype: DType) -> Result<Self, NumericsError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(NumericsError::Shape(format!(
                "shape {shape:?} holds {n} elements but {} were supplied",
                data.len()
            )));
        }
        if dtype == DType::F32 {
            data.iter_mut().for_each(|x| *x = *x as f32 as f64);
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(NumericsError::NonFinite("tensor construction".into()));
        }
        Ok(Self { shape, dtype, data })
    }

    /// Builds a tensor from parts already known to be consistent and finite.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>, dtype: DType) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, dtype, data }
    }

    pub fn zeros(shape: Vec<usize>, dtype: DType) -> Self {
        let n = shape.iter().product();
        Self { shape, dtype, data: vec![0.0; n] }
    }

    pub fn scalar(x: f64, dtype: DType) -> Self {
        Self { shape: vec![1, 1], dtype, data: vec![dtype.round(x)] }
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self, NumericsError> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(NumericsError::Shape("ragged rows".into()));
        }
        Self::new(vec![r, c], rows.iter().flat_map(|row| row.iter().copied()).collect())
    }

    pub fn identity(n: usize, dtype: DType) -> Self {
        let mut t = Self::zeros(vec![n, n], dtype);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Rows and columns of a matrix view. Rank-1 tensors are a single row.
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [c] => (1, *c),
            [r, c] => (*r, *c),
            other => {
                let c = other.last().copied().unwrap_or(1);
                (self.data.len() / c.max(1), c)
            }
        }
    }

    pub fn get2(&self, r: usize, c: usize) -> f64 {
        let (_, cols) = self.dims2();
        self.data[r * cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let (_, cols) = self.dims2();
        &self.data[r * cols..(r + 1) * cols]
    }

    pub fn to_dtype(&self, dtype: DType) -> Tensor {
        let data = self.data.iter().map(|&x| dtype.round(x)).collect();
        Tensor { shape: self.shape.clone(), dtype, data }
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor, NumericsError> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(NumericsError::Shape(format!("cannot reshape {:?} to {shape:?}", self.shape)));
        }
        Ok(Tensor { shape, dtype: self.dtype, data: self.data.clone() })
    }

    /// Replaces the contents elementwise, rounding to the tensor's dtype.
    pub fn assign(&mut self, values: impl IntoIterator<Item = f64>) -> Result<(), NumericsError> {
        let dtype = self.dtype;
        let mut n = 0;
        for (dst, v) in self.data.iter_mut().zip(values) {
            *dst = dtype.round(v);
            n += 1;
        }
        if n != self.data.len() {
            return Err(NumericsError::Shape("assign length mismatch".into()));
        }
        self.ensure_finite("assign")
    }

    pub fn ensure_finite(&self, op: &str) -> Result<(), NumericsError> {
        if self.data.iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(NumericsError::NonFinite(op.to_string()))
        }
    }

    fn check_dtype(&self, other: &Tensor, op: &str) -> Result<(), NumericsError> {
        if self.dtype != other.dtype {
            return Err(NumericsError::DType(format!("{op}: {} vs {}", self.dtype, other.dtype)));
        }
        Ok(())
    }

    /// `self · other`, or `self · otherᵀ` when `transpose_rhs` is set.
    pub fn matmul_ext(&self, other: &Tensor, transpose_rhs: bool) -> Result<Tensor, NumericsError> {
        self.check_dtype(other, "matmul")?;
        let (m, k) = self.dims2();
        let (br, bc) = other.dims2();
        let (k2, n) = if transpose_rhs { (bc, br) } else { (br, bc) };
        if k != k2 {
            return Err(NumericsError::Shape(format!(
                "matmul inner dimensions differ: {:?} x {:?}{}",
                self.shape,
                other.shape,
                if transpose_rhs { "ᵀ" } else { "" }
            )));
        }
        let a = &self.data;
        let b = &other.data;
        let mut out = vec![0.0; m * n];
        if transpose_rhs {
            for i in 0..m {
                let arow = &a[i * k..(i + 1) * k];
                for j in 0..n {
                    let brow = &b[j * k..(j + 1) * k];
                    let mut acc = 0.0;
                    for p in 0..k {
                        acc += arow[p] * brow[p];
                    }
                    out[i * n + j] = acc;
                }
            }
        } else {
            for i in 0..m {
                let orow = &mut out[i * n..(i + 1) * n];
                for p in 0..k {
                    let av = a[i * k + p];
                    if av == 0.0 {
                        continue;
                    }
                    let brow = &b[p * n..(p + 1) * n];
                    for (o, &bv) in orow.iter_mut().zip(brow) {
                        *o += av * bv;
                    }
                }
            }
        }
        self.finish(vec![m, n], out, "matmul")
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor, NumericsError> {
        self.matmul_ext(other, false)
    }

    /// `selfᵀ · other` without materializing the transpose.
    pub fn t_matmul(&self, other: &Tensor) -> Result<Tensor, NumericsError> {
        self.check_dtype(other, "matmul")?;
        let (k, m) = self.dims2();
        let (k2, n) = other.dims2();
        if k != k2 {
            return Err(NumericsError::Shape(format!(
                "matmul inner dimensions differ: {:?}ᵀ x {:?}",
                self.shape, other.shape
            )));
        }
        let mut out = vec![0.0; m * n];
        for p in 0..k {
            let arow = &self.data[p * m..(p + 1) * m];
            let brow = &other.data[p * n..(p + 1) * n];
            for (i, &av) in arow.iter().enumerate() {
                if av == 0.0 {
                    continue;
                }
                let orow = &mut out[i * n..(i + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
        self.finish(vec![m, n], out, "matmul")
    }

    pub fn transpose(&self) -> Tensor {
        let (r, c) = self.dims2();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor::from_parts(vec![c, r], out, self.dtype)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor, NumericsError> {
        self.check_dtype(other, "add")?;
        if self.shape != other.shape {
            return Err(NumericsError::Shape(format!("add: {:?} vs {:?}", self.shape, other.shape)));
        }
        let out = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        self.finish(self.shape.clone(), out, "add")
    }

    pub fn scale(&self, s: f64) -> Result<Tensor, NumericsError> {
        let out = self.data.iter().map(|a| a * s).collect();
        self.finish(self.shape.clone(), out, "scale")
    }

    pub fn relu(&self) -> Tensor {
        let out = self.data.iter().map(|&a| if a > 0.0 { a } else { 0.0 }).collect();
        Tensor::from_parts(self.shape.clone(), out, self.dtype)
    }

    /// Adds `bias` (one entry per column) to every row.
    pub fn add_row_bias(&self, bias: &Tensor) -> Result<Tensor, NumericsError> {
        self.check_dtype(bias, "bias")?;
        let (_, c) = self.dims2();
        if bias.len() != c {
            return Err(NumericsError::Shape(format!("bias of {} entries on {c} columns", bias.len())));
        }
        let out = self.data.chunks(c).flat_map(|row| row.iter().zip(&bias.data).map(|(a, b)| a + b)).collect();
        self.finish(self.shape.clone(), out, "bias")
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&self) -> Result<Tensor, NumericsError> {
        self.ensure_finite("softmax_rows")?;
        let (_, c) = self.dims2();
        let mut out = Vec::with_capacity(self.data.len());
        for row in self.data.chunks(c.max(1)) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|x| (x - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            out.extend(exps.iter().map(|e| e / sum));
        }
        self.finish(self.shape.clone(), out, "softmax_rows")
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    fn finish(&self, shape: Vec<usize>, mut out: Vec<f64>, op: &str) -> Result<Tensor, NumericsError> {
        if self.dtype == DType::F32 {
            out.iter_mut().for_each(|x| *x = *x as f32 as f64);
        }
        let t = Tensor::from_parts(shape, out, self.dtype);
        t.ensure_finite(op)?;
        Ok(t)
    }

    /// Little-endian payload in the tensor's own dtype.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.data.len() * self.dtype.size_of());
        match self.dtype {
            DType::F32 => self.data.iter().for_each(|&x| out.extend((x as f32).to_le_bytes())),
            DType::F64 => self.data.iter().for_each(|&x| out.extend(x.to_le_bytes())),
        }
        out
    }

    pub fn from_le_bytes(shape: Vec<usize>, dtype: DType, bytes: &[u8]) -> Result<Tensor, NumericsError> {
        let n: usize = shape.iter().product();
        if bytes.len() != n * dtype.size_of() {
            return Err(NumericsError::Shape(format!(
                "payload of {} bytes does not match {shape:?} {dtype}",
                bytes.len()
            )));
        }
        let data = match dtype {
            DType::F32 => bytes.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64).collect(),
            DType::F64 => bytes.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect(),
        };
        Tensor::with_dtype(shape, data, dtype)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_matmul(a: &Tensor, b: &Tensor) -> Vec<f64> {
        let (m, k) = a.dims2();
        let (_, n) = b.dims2();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    out[i * n + j] += a.get2(i, p) * b.get2(p, j);
                }
            }
        }
        out
    }

    fn pseudo(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = crate::checkpoint::SeededRng::new(seed);
        (0..n).map(|_| rng.next_f64() * 2.0 - 1.0).collect()
    }

    #[test]
    fn identity_matmul() {
        let a = Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        let i = Tensor::identity(2, DType::F64);
        assert_eq!(i.matmul(&a).unwrap(), a);
    }

    #[test]
    fn row_times_column() {
        let a = Tensor::from_rows(&[&[1.0, 2.0]]).unwrap();
        let b = Tensor::from_rows(&[&[3.0], &[4.0]]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().data(), &[11.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let a = Tensor::new(vec![5, 4], pseudo(1, 20)).unwrap();
        let b = Tensor::new(vec![4, 3], pseudo(2, 12)).unwrap();
        let fast = a.matmul(&b).unwrap();
        for (x, y) in fast.data().iter().zip(naive_matmul(&a, &b)) {
            assert!((x - y).abs() <= 1e-12);
        }
        let bt = b.transpose();
        let via_t = a.matmul_ext(&bt, true).unwrap();
        let at = a.transpose();
        let via_tm = at.t_matmul(&b).unwrap();
        for ((x, y), z) in fast.data().iter().zip(via_t.data()).zip(via_tm.data()) {
            assert!((x - y).abs() <= 1e-12);
            assert!((x - z).abs() <= 1e-12);
        }
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = Tensor::zeros(vec![2, 3], DType::F64);
        let b = Tensor::zeros(vec![2, 3], DType::F64);
        assert!(matches!(a.matmul(&b), Err(NumericsError::Shape(_))));
        let c = Tensor::zeros(vec![3, 2], DType::F32);
        assert!(matches!(a.matmul(&c), Err(NumericsError::DType(_))));
    }

    #[test]
    fn softmax_examples() {
        let t = Tensor::from_rows(&[&[0.0, 0.0]]).unwrap().softmax_rows().unwrap();
        assert_eq!(t.data(), &[0.5, 0.5]);
        let t = Tensor::from_rows(&[&[2f64.ln(), 0.0]]).unwrap().softmax_rows().unwrap();
        assert!((t.data()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((t.data()[1] - 1.0 / 3.0).abs() < 1e-15);
        // mpmath, 40 digits: [0.42231879825151819660, 0.42231879825151819660, 0.15536240349696360679]
        let t = Tensor::from_rows(&[&[1000.0, 1000.0, 999.0]]).unwrap().softmax_rows().unwrap();
        let want = [0.422_318_798_251_518_2, 0.422_318_798_251_518_2, 0.155_362_403_496_963_6];
        for (x, w) in t.data().iter().zip(want) {
            assert!((x - w).abs() < 1e-15);
        }
        assert!((t.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn non_finite_is_an_error() {
        assert!(Tensor::new(vec![1], vec![f64::NAN]).is_err());
        let big = Tensor::new(vec![1, 1], vec![1e308]).unwrap();
        assert!(matches!(big.scale(10.0), Err(NumericsError::NonFinite(_))));
    }

    #[test]
    fn f32_rounds_on_construction() {
        let t = Tensor::with_dtype(vec![1], vec![0.1], DType::F32).unwrap();
        assert_eq!(t.data()[0], 0.1f32 as f64);
        let back = Tensor::from_le_bytes(vec![1], DType::F32, &t.to_le_bytes()).unwrap();
        assert_eq!(back, t);
    }
}
