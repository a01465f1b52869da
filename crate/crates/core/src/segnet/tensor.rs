use std::fmt::Debug;

/// Scalar type the network runs in: `f32` for training and inference, `f64`
/// for gradient checking.
pub trait Float:
    num_traits::Float + num_traits::FromPrimitive + Default + Debug + Send + Sync + std::iter::Sum + 'static
{
    /// `c = a·b` (or `c += a·b`) with explicit strides; `c` strides are `(row, column)`.
    #[allow(clippy::too_many_arguments)]
    fn gemm_strided(m: usize, k: usize, n: usize, a: Mat<'_, Self>, b: Mat<'_, Self>, c: &mut [Self], cst: (usize, usize), acc: bool);

    /// Row-major `c = a·b`; `a_t`/`b_t` mean the operand is stored transposed.
    #[allow(clippy::too_many_arguments)]
    fn gemm(m: usize, k: usize, n: usize, a: &[Self], a_t: bool, b: &[Self], b_t: bool, c: &mut [Self], acc: bool) {
        Self::gemm_strided(m, k, n, Mat::dense(a, m, k, a_t), Mat::dense(b, k, n, b_t), c, (n, 1), acc);
    }

    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("representable")
    }

    fn f64(self) -> f64 {
        self.to_f64().expect("finite")
    }
}

/// Borrowed matrix operand with element strides.
#[derive(Debug, Clone, Copy)]
pub struct Mat<'a, F> {
    pub data: &'a [F],
    pub rs: usize,
    pub cs: usize,
}

impl<'a, F> Mat<'a, F> {
    /// Logical `rows x cols`; transposed storage is `cols x rows` row-major.
    pub fn dense(data: &'a [F], rows: usize, cols: usize, transposed: bool) -> Self {
        if transposed {
            Mat { data, rs: 1, cs: rows }
        } else {
            Mat { data, rs: cols, cs: 1 }
        }
    }

    fn fits(&self, rows: usize, cols: usize) -> bool {
        rows == 0 || cols == 0 || (rows - 1) * self.rs + (cols - 1) * self.cs < self.data.len()
    }
}

macro_rules! impl_float {
    ($t:ty, $gemm:path) => {
        impl Float for $t {
            fn gemm_strided(m: usize, k: usize, n: usize, a: Mat<'_, Self>, b: Mat<'_, Self>, c: &mut [Self], cst: (usize, usize), acc: bool) {
                if m == 0 || n == 0 {
                    return;
                }
                let (rsc, csc) = cst;
                assert!(a.fits(m, k) && b.fits(k, n) && (m - 1) * rsc + (n - 1) * csc < c.len(), "gemm operand too small");
                let beta = if acc { 1.0 } else { 0.0 };
                // SAFETY: extents asserted above for the given strides.
                unsafe {
                    $gemm(
                        m, k, n, 1.0,
                        a.data.as_ptr(), a.rs as isize, a.cs as isize,
                        b.data.as_ptr(), b.rs as isize, b.cs as isize,
                        beta, c.as_mut_ptr(), rsc as isize, csc as isize,
                    );
                }
            }
        }
    };
}

impl_float!(f32, matrixmultiply::sgemm);
impl_float!(f64, matrixmultiply::dgemm);

/// Dense `(N, C, D, H, W)` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F> {
    shape: [usize; 5],
    data: Vec<F>,
}

impl<F: Float> Tensor<F> {
    pub fn zeros(shape: [usize; 5]) -> Self {
        Tensor { shape, data: vec![F::zero(); shape.iter().product()] }
    }

    pub fn from_vec(shape: [usize; 5], data: Vec<F>) -> Self {
        assert_eq!(data.len(), shape.iter().product::<usize>(), "tensor data length");
        Tensor { shape, data }
    }

    pub fn shape(&self) -> [usize; 5] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn spatial(&self) -> [usize; 3] {
        [self.shape[2], self.shape[3], self.shape[4]]
    }

    pub fn voxels(&self) -> usize {
        self.shape[2] * self.shape[3] * self.shape[4]
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    pub fn sample(&self, n: usize) -> &[F] {
        let s = self.data.len() / self.shape[0];
        &self.data[n * s..(n + 1) * s]
    }

    pub fn sample_mut(&mut self, n: usize) -> &mut [F] {
        let s = self.data.len() / self.shape[0];
        &mut self.data[n * s..(n + 1) * s]
    }

    /// Channel-wise concatenation of two tensors with equal batch and spatial shape.
    pub fn concat_channels(a: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
        assert_eq!(a.batch(), b.batch());
        assert_eq!(a.spatial(), b.spatial());
        let mut out = Tensor::zeros([a.batch(), a.channels() + b.channels(), a.shape[2], a.shape[3], a.shape[4]]);
        for n in 0..a.batch() {
            let (sa, sb) = (a.sample(n), b.sample(n));
            let dst = out.sample_mut(n);
            dst[..sa.len()].copy_from_slice(sa);
            dst[sa.len()..].copy_from_slice(sb);
        }
        out
    }

    /// Inverse of [`Tensor::concat_channels`]: splits off the first `c` channels.
    pub fn split_channels(&self, c: usize) -> (Tensor<F>, Tensor<F>) {
        let [n, ct, d, h, w] = self.shape;
        let v = d * h * w;
        let mut a = Tensor::zeros([n, c, d, h, w]);
        let mut b = Tensor::zeros([n, ct - c, d, h, w]);
        for i in 0..n {
            let src = self.sample(i);
            a.sample_mut(i).copy_from_slice(&src[..c * v]);
            b.sample_mut(i).copy_from_slice(&src[c * v..]);
        }
        (a, b)
    }

    pub fn cast<G: Float>(&self) -> Tensor<G> {
        Tensor { shape: self.shape, data: self.data.iter().map(|v| G::of(v.f64())).collect() }
    }

    pub fn add_assign(&mut self, other: &Tensor<F>) {
        assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }
}
