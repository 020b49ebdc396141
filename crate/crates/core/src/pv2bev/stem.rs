//! Strided convolution stem producing per-camera feature maps.

use crate::numgrad::{lit, Init, Level, Linear, Module, NumError, Param, Real, Tensor};
use crate::synthscene::ViewImage;

/// 3×3 convolution with zero padding 1, applied to `count` stacked maps of
/// `[height·width, c_in]` rows. Implemented as row gather + matmul.
pub struct Conv3x3<T: Real> {
    pub linear: Linear<T>,
    pub stride: usize,
    c_in: usize,
}

/// Output extent of a padded 3×3 convolution.
pub fn conv_out(len: usize, stride: usize) -> usize {
    (len - 1) / stride + 1
}

/// im2col row indices: for each output pixel the 9 input rows of its window.
pub fn im2col_index(count: usize, height: usize, width: usize, stride: usize) -> Vec<Option<usize>> {
    let (oh, ow) = (conv_out(height, stride), conv_out(width, stride));
    let mut idx = Vec::with_capacity(count * oh * ow * 9);
    for m in 0..count {
        for r in 0..oh {
            for c in 0..ow {
                for dr in 0..3 {
                    for dc in 0..3 {
                        let (ir, ic) = ((r * stride + dr) as isize - 1, (c * stride + dc) as isize - 1);
                        let inside = ir >= 0 && ic >= 0 && (ir as usize) < height && (ic as usize) < width;
                        idx.push(inside.then(|| m * height * width + ir as usize * width + ic as usize));
                    }
                }
            }
        }
    }
    idx
}

impl<T: Real> Conv3x3<T> {
    pub fn new(init: &mut Init, c_in: usize, c_out: usize, stride: usize) -> Self {
        Conv3x3 { linear: Linear::new(init, 9 * c_in, c_out), stride, c_in }
    }

    /// Returns the output rows and the output map extent.
    pub fn forward(&self, x: &Tensor<T>, count: usize, height: usize, width: usize) -> Result<(Tensor<T>, usize, usize), NumError> {
        if x.rows() != count * height * width || x.cols() != self.c_in {
            return Err(NumError::shape(
                "conv3x3",
                format!("input {:?} for {count} maps of {height}×{width}×{}", x.shape(), self.c_in),
            ));
        }
        let (oh, ow) = (conv_out(height, self.stride), conv_out(width, self.stride));
        let cols = x.gather_rows(&im2col_index(count, height, width, self.stride))?.reshape(&[count * oh * ow, 9 * self.c_in])?;
        Ok((self.linear.forward(&cols)?, oh, ow))
    }
}

impl<T: Real> Module<T> for Conv3x3<T> {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Param<T>)>) {
        self.linear.collect_params(prefix, out);
    }
}

/// Per-camera feature maps stacked row-wise: `[cameras·rows·cols, D]`.
#[derive(Clone)]
pub struct ViewFeatures<T: Real> {
    pub maps: Tensor<T>,
    pub cameras: usize,
    pub rows: usize,
    pub cols: usize,
    /// Image pixels per feature pixel along each axis.
    pub downsample: usize,
}

impl<T: Real> ViewFeatures<T> {
    pub fn levels(&self) -> Vec<Level> {
        (0..self.cameras).map(|k| Level { start: k * self.rows * self.cols, height: self.rows, width: self.cols }).collect()
    }

    pub fn dim(&self) -> usize {
        self.maps.cols()
    }

    /// Continuous feature-map (row, col) of image pixel coordinates `(u, v)`.
    pub fn feature_coords(&self, u: f64, v: f64) -> [f64; 2] {
        let s = self.downsample as f64;
        [(v - 0.5) / s, (u - 0.5) / s]
    }

    /// Image `(u, v)` at the centre of feature pixel `(row, col)`.
    pub fn pixel_of(&self, row: usize, col: usize) -> (f64, f64) {
        let s = self.downsample as f64;
        (col as f64 * s + 0.5, row as f64 * s + 0.5)
    }
}

/// Two stride-2 3×3 convolutions with ReLU: 1 → `hidden` → `dim` channels.
pub struct ConvStem<T: Real> {
    pub conv1: Conv3x3<T>,
    pub conv2: Conv3x3<T>,
}

impl<T: Real> ConvStem<T> {
    pub fn new(init: &mut Init, hidden: usize, dim: usize) -> Self {
        ConvStem { conv1: Conv3x3::new(init, 1, hidden, 2), conv2: Conv3x3::new(init, hidden, dim, 2) }
    }

    pub fn forward(&self, images: &[ViewImage]) -> Result<ViewFeatures<T>, NumError> {
        let first = images.first().ok_or_else(|| NumError::Config("no camera images".into()))?;
        let (rows, cols) = (first.rows, first.cols);
        if images.iter().any(|im| im.rows != rows || im.cols != cols) {
            return Err(NumError::Config("camera images differ in size".into()));
        }
        let k = images.len();
        let pixels: Vec<T> = images.iter().flat_map(|im| im.data.iter().map(|&v| lit::<T>(v as f64))).collect();
        let x = Tensor::new(pixels, &[k * rows * cols, 1])?;
        let (h1, r1, c1) = self.conv1.forward(&x, k, rows, cols)?;
        let (h2, r2, c2) = self.conv2.forward(&h1.relu(), k, r1, c1)?;
        Ok(ViewFeatures { maps: h2.relu(), cameras: k, rows: r2, cols: c2, downsample: 4 })
    }
}

impl<T: Real> Module<T> for ConvStem<T> {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Param<T>)>) {
        self.conv1.collect_params(&crate::numgrad::join(prefix, "conv1"), out);
        self.conv2.collect_params(&crate::numgrad::join(prefix, "conv2"), out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct 3×3 convolution loop.
    fn oracle_conv(x: &[f64], h: usize, w: usize, c_in: usize, wt: &[f64], b: &[f64], stride: usize) -> Vec<f64> {
        let c_out = b.len();
        let (oh, ow) = (conv_out(h, stride), conv_out(w, stride));
        let mut out = vec![0.0; oh * ow * c_out];
        for r in 0..oh {
            for c in 0..ow {
                for o in 0..c_out {
                    let mut acc = b[o];
                    for dr in 0..3 {
                        for dc in 0..3 {
                            let (ir, ic) = ((r * stride + dr) as isize - 1, (c * stride + dc) as isize - 1);
                            if ir < 0 || ic < 0 || ir as usize >= h || ic as usize >= w {
                                continue;
                            }
                            for i in 0..c_in {
                                let tap = (dr * 3 + dc) * c_in + i;
                                acc += x[(ir as usize * w + ic as usize) * c_in + i] * wt[tap * c_out + o];
                            }
                        }
                    }
                    out[(r * ow + c) * c_out + o] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_loop() {
        let mut init = Init::new(3);
        for stride in [1, 2] {
            let conv = Conv3x3::<f64>::new(&mut init, 2, 3, stride);
            conv.linear.bias.set_data(vec![0.1, -0.2, 0.3]).unwrap();
            let (h, w) = (5, 7);
            let x: Vec<f64> = (0..h * w * 2).map(|i| ((i * 37 % 11) as f64 - 5.0) / 4.0).collect();
            let (out, oh, ow) = conv.forward(&Tensor::new(x.clone(), &[h * w, 2]).unwrap(), 1, h, w).unwrap();
            assert_eq!((oh, ow), (conv_out(h, stride), conv_out(w, stride)));
            let expect = oracle_conv(&x, h, w, 2, conv.linear.weight.get().data(), conv.linear.bias.get().data(), stride);
            for (a, b) in out.data().iter().zip(&expect) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn stem_output_extent() {
        let mut init = Init::new(0);
        let stem = ConvStem::<f32>::new(&mut init, 4, 8);
        let img = ViewImage { rows: 64, cols: 96, data: vec![0.5; 64 * 96] };
        let f = stem.forward(&[img.clone(), img]).unwrap();
        assert_eq!((f.cameras, f.rows, f.cols, f.dim()), (2, 16, 24, 8));
        assert_eq!(f.levels()[1].start, 16 * 24);
        let (u, v) = f.pixel_of(3, 5);
        assert_eq!(f.feature_coords(u, v), [3.0, 5.0]);
    }
}
