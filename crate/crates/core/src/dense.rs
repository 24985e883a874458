use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{gemm, xavier_init, Matrix, Rng};

/// Affine layer `y = x · W + b` over row-batched inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `inputs × outputs`
    pub w: Matrix,
    /// `1 × outputs`
    pub b: Matrix,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            w: Matrix::zeros(inputs, outputs),
            b: Matrix::zeros(1, outputs),
        }
    }

    pub fn init(inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        Dense {
            w: xavier_init(inputs, outputs, rng),
            b: Matrix::zeros(1, outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.w.rows()
    }

    pub fn outputs(&self) -> usize {
        self.w.cols()
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.inputs() {
            return Err(Error::Dimension {
                op: "dense forward",
                left: x.shape(),
                right: self.w.shape(),
            });
        }
        let mut y = Matrix::zeros(x.rows(), self.outputs());
        gemm(
            false,
            false,
            x.rows(),
            self.outputs(),
            self.inputs(),
            1.0,
            x.as_slice(),
            self.w.as_slice(),
            0.0,
            y.as_mut_slice(),
        );
        y.add_row_broadcast(self.b.as_slice());
        Ok(y)
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: &Matrix, dy: &Matrix, grad: &mut Dense) -> Result<Matrix> {
        if dy.cols() != self.outputs() || dy.rows() != x.rows() || x.cols() != self.inputs() {
            return Err(Error::Dimension {
                op: "dense backward",
                left: x.shape(),
                right: dy.shape(),
            });
        }
        let (n, i, o) = (x.rows(), self.inputs(), self.outputs());
        gemm(
            true,
            false,
            i,
            o,
            n,
            1.0,
            x.as_slice(),
            dy.as_slice(),
            1.0,
            grad.w.as_mut_slice(),
        );
        dy.add_column_sums_to(grad.b.as_mut_slice());
        let mut dx = Matrix::zeros(n, i);
        gemm(
            false,
            true,
            n,
            i,
            o,
            1.0,
            dy.as_slice(),
            self.w.as_slice(),
            0.0,
            dx.as_mut_slice(),
        );
        Ok(dx)
    }
}
