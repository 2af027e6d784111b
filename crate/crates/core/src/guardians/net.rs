use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::numkit::{tanh_backward, Mat, ParamSet};

/// Layer widths of the profile autoencoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AeConfig {
    /// Feature dimension `D`; profiles have `5·D` entries.
    pub dim: usize,
    /// Node compression width; also the length of every mixing channel.
    pub node_hidden: usize,
    /// Edge compression width; must be a multiple of `node_hidden`.
    pub edge_hidden: usize,
    pub conv_channels: usize,
    pub kernel: usize,
    pub fc_hidden: usize,
    pub bottleneck: usize,
}

impl Default for AeConfig {
    fn default() -> Self {
        AeConfig::for_dim(32)
    }
}

impl AeConfig {
    /// `h_n = D/2`, `h_e = D`, bottleneck `D/4`.
    pub fn for_dim(dim: usize) -> Self {
        let node_hidden = (dim / 2).max(1);
        AeConfig {
            dim,
            node_hidden,
            edge_hidden: 2 * node_hidden,
            conv_channels: 4,
            kernel: 3,
            fc_hidden: 2 * (dim / 4).max(1),
            bottleneck: (dim / 4).max(1),
        }
    }

    pub fn input_dim(&self) -> usize {
        5 * self.dim
    }

    fn in_channels(&self) -> usize {
        1 + self.edge_hidden / self.node_hidden
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.dim == 0 || self.node_hidden == 0 || self.conv_channels == 0 || self.fc_hidden == 0 {
            return Err("autoencoder widths must be positive".into());
        }
        if self.edge_hidden == 0 || !self.edge_hidden.is_multiple_of(self.node_hidden) {
            return Err("edge_hidden must be a positive multiple of node_hidden".into());
        }
        if self.kernel.is_multiple_of(2) {
            return Err("kernel must be odd".into());
        }
        if self.bottleneck == 0 || 4 * self.bottleneck >= self.input_dim() {
            return Err(format!(
                "bottleneck {} must be positive and below input size / 4 ({})",
                self.bottleneck,
                self.input_dim() / 4
            ));
        }
        Ok(())
    }
}

/// 1-D convolution along the feature axis with 'same' zero padding.
/// `weight` is `out × (in·kernel)`, indexed `[o][i·kernel + k]`.
fn conv_forward(weight: &Mat, bias: &Mat, x: &[f64], in_ch: usize, len: usize, kernel: usize) -> Vec<f64> {
    let out_ch = weight.rows();
    let half = kernel / 2;
    let mut y = vec![0.0; out_ch * len];
    for o in 0..out_ch {
        let w = weight.row(o);
        for t in 0..len {
            let mut acc = bias.get(o, 0);
            for i in 0..in_ch {
                for k in 0..kernel {
                    let s = t + k;
                    if s < half || s - half >= len {
                        continue;
                    }
                    acc += w[i * kernel + k] * x[i * len + s - half];
                }
            }
            y[o * len + t] = acc;
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    weight: &Mat,
    x: &[f64],
    dy: &[f64],
    in_ch: usize,
    len: usize,
    kernel: usize,
    d_weight: &mut Mat,
    d_bias: &mut Mat,
) -> Vec<f64> {
    let out_ch = weight.rows();
    let half = kernel / 2;
    let mut dx = vec![0.0; in_ch * len];
    for o in 0..out_ch {
        let w = weight.row(o);
        for t in 0..len {
            let g = dy[o * len + t];
            d_bias.as_mut_slice()[o] += g;
            for i in 0..in_ch {
                for k in 0..kernel {
                    let s = t + k;
                    if s < half || s - half >= len {
                        continue;
                    }
                    let xi = i * len + s - half;
                    d_weight.as_mut_slice()[o * in_ch * kernel + i * kernel + k] += g * x[xi];
                    dx[xi] += g * w[i * kernel + k];
                }
            }
        }
    }
    dx
}

fn dense(w: &Mat, b: &Mat, x: &[f64]) -> Vec<f64> {
    let mut y = b.as_slice().to_vec();
    w.matvec_acc(x, &mut y);
    y
}

fn tanh_dense(w: &Mat, b: &Mat, x: &[f64]) -> Vec<f64> {
    let mut y = dense(w, b, x);
    y.iter_mut().for_each(|v| *v = v.tanh());
    y
}

fn dense_backward(w: &Mat, x: &[f64], dy: &[f64], dw: &mut Mat, db: &mut Mat) -> Vec<f64> {
    dw.add_outer(dy, x);
    for (b, g) in db.as_mut_slice().iter_mut().zip(dy) {
        *b += g;
    }
    w.matvec_t(dy)
}

/// Weights of the profile autoencoder.
///
/// Encoder: node FC `D→h_n` and edge FC `4D→h_e`, stacked into
/// `1 + h_e/h_n` channels of length `h_n`; two convolutions; two FC layers
/// down to the bottleneck. The decoder mirrors it and ends in linear node and
/// edge heads. Hidden layers use tanh.
#[derive(Clone, Debug, PartialEq)]
pub struct AeNet {
    pub config: AeConfig,
    pub node_w: Mat,
    pub node_b: Mat,
    pub edge_w: Mat,
    pub edge_b: Mat,
    pub conv1_w: Mat,
    pub conv1_b: Mat,
    pub conv2_w: Mat,
    pub conv2_b: Mat,
    pub fc1_w: Mat,
    pub fc1_b: Mat,
    pub fc2_w: Mat,
    pub fc2_b: Mat,
    pub dfc1_w: Mat,
    pub dfc1_b: Mat,
    pub dfc2_w: Mat,
    pub dfc2_b: Mat,
    pub dconv1_w: Mat,
    pub dconv1_b: Mat,
    pub dconv2_w: Mat,
    pub dconv2_b: Mat,
    pub out_node_w: Mat,
    pub out_node_b: Mat,
    pub out_edge_w: Mat,
    pub out_edge_b: Mat,
}

pub(crate) struct AeCache {
    input: Vec<f64>,
    node_h: Vec<f64>,
    edge_h: Vec<f64>,
    c0: Vec<f64>,
    c1: Vec<f64>,
    c2: Vec<f64>,
    f1: Vec<f64>,
    z: Vec<f64>,
    g1: Vec<f64>,
    g2: Vec<f64>,
    d1: Vec<f64>,
    d2: Vec<f64>,
}

impl AeNet {
    pub fn zeros(config: AeConfig) -> Self {
        let c = &config;
        let d = c.dim;
        let l = c.node_hidden;
        let cin = c.in_channels();
        let k = c.conv_channels;
        let flat = k * l;
        AeNet {
            node_w: Mat::zeros(l, d),
            node_b: Mat::zeros(l, 1),
            edge_w: Mat::zeros(c.edge_hidden, 4 * d),
            edge_b: Mat::zeros(c.edge_hidden, 1),
            conv1_w: Mat::zeros(k, cin * c.kernel),
            conv1_b: Mat::zeros(k, 1),
            conv2_w: Mat::zeros(k, k * c.kernel),
            conv2_b: Mat::zeros(k, 1),
            fc1_w: Mat::zeros(c.fc_hidden, flat),
            fc1_b: Mat::zeros(c.fc_hidden, 1),
            fc2_w: Mat::zeros(c.bottleneck, c.fc_hidden),
            fc2_b: Mat::zeros(c.bottleneck, 1),
            dfc1_w: Mat::zeros(c.fc_hidden, c.bottleneck),
            dfc1_b: Mat::zeros(c.fc_hidden, 1),
            dfc2_w: Mat::zeros(flat, c.fc_hidden),
            dfc2_b: Mat::zeros(flat, 1),
            dconv1_w: Mat::zeros(k, k * c.kernel),
            dconv1_b: Mat::zeros(k, 1),
            dconv2_w: Mat::zeros(cin, k * c.kernel),
            dconv2_b: Mat::zeros(cin, 1),
            out_node_w: Mat::zeros(d, l),
            out_node_b: Mat::zeros(d, 1),
            out_edge_w: Mat::zeros(4 * d, c.edge_hidden),
            out_edge_b: Mat::zeros(4 * d, 1),
            config,
        }
    }

    pub fn init<R: Rng + ?Sized>(config: AeConfig, rng: &mut R) -> Self {
        let mut net = AeNet::zeros(config);
        let kernel = net.config.kernel;
        for (name, m) in net.blocks_mut_named() {
            if name.ends_with("_b") {
                continue;
            }
            let fan_in = if name.contains("conv") {
                m.cols().max(kernel)
            } else {
                m.cols()
            };
            *m = Mat::uniform(m.rows(), m.cols(), fan_in, rng);
        }
        net
    }

    fn blocks_mut_named(&mut self) -> Vec<(&'static str, &mut Mat)> {
        vec![
            ("node_w", &mut self.node_w),
            ("node_b", &mut self.node_b),
            ("edge_w", &mut self.edge_w),
            ("edge_b", &mut self.edge_b),
            ("conv1_w", &mut self.conv1_w),
            ("conv1_b", &mut self.conv1_b),
            ("conv2_w", &mut self.conv2_w),
            ("conv2_b", &mut self.conv2_b),
            ("fc1_w", &mut self.fc1_w),
            ("fc1_b", &mut self.fc1_b),
            ("fc2_w", &mut self.fc2_w),
            ("fc2_b", &mut self.fc2_b),
            ("dfc1_w", &mut self.dfc1_w),
            ("dfc1_b", &mut self.dfc1_b),
            ("dfc2_w", &mut self.dfc2_w),
            ("dfc2_b", &mut self.dfc2_b),
            ("dconv1_w", &mut self.dconv1_w),
            ("dconv1_b", &mut self.dconv1_b),
            ("dconv2_w", &mut self.dconv2_w),
            ("dconv2_b", &mut self.dconv2_b),
            ("out_node_w", &mut self.out_node_w),
            ("out_node_b", &mut self.out_node_b),
            ("out_edge_w", &mut self.out_edge_w),
            ("out_edge_b", &mut self.out_edge_b),
        ]
    }

    pub(crate) fn forward(&self, x: &[f64]) -> (Vec<f64>, AeCache) {
        let c = &self.config;
        let d = c.dim;
        let l = c.node_hidden;
        let cin = c.in_channels();
        let k = c.conv_channels;

        let node_h = tanh_dense(&self.node_w, &self.node_b, &x[..d]);
        let edge_h = tanh_dense(&self.edge_w, &self.edge_b, &x[d..]);
        let mut c0 = node_h.clone();
        c0.extend_from_slice(&edge_h);
        let mut c1 = conv_forward(&self.conv1_w, &self.conv1_b, &c0, cin, l, c.kernel);
        c1.iter_mut().for_each(|v| *v = v.tanh());
        let mut c2 = conv_forward(&self.conv2_w, &self.conv2_b, &c1, k, l, c.kernel);
        c2.iter_mut().for_each(|v| *v = v.tanh());
        let f1 = tanh_dense(&self.fc1_w, &self.fc1_b, &c2);
        let z = tanh_dense(&self.fc2_w, &self.fc2_b, &f1);

        let g1 = tanh_dense(&self.dfc1_w, &self.dfc1_b, &z);
        let g2 = tanh_dense(&self.dfc2_w, &self.dfc2_b, &g1);
        let mut d1 = conv_forward(&self.dconv1_w, &self.dconv1_b, &g2, k, l, c.kernel);
        d1.iter_mut().for_each(|v| *v = v.tanh());
        let mut d2 = conv_forward(&self.dconv2_w, &self.dconv2_b, &d1, k, l, c.kernel);
        d2.iter_mut().for_each(|v| *v = v.tanh());
        let mut out = dense(&self.out_node_w, &self.out_node_b, &d2[..l]);
        out.extend(dense(&self.out_edge_w, &self.out_edge_b, &d2[l..]));

        let cache = AeCache {
            input: x.to_vec(),
            node_h,
            edge_h,
            c0,
            c1,
            c2,
            f1,
            z,
            g1,
            g2,
            d1,
            d2,
        };
        (out, cache)
    }

    /// Accumulate parameter gradients given `∂L/∂output`.
    pub(crate) fn backward(&self, cache: &AeCache, d_out: &[f64], g: &mut AeNet) {
        let c = &self.config;
        let d = c.dim;
        let l = c.node_hidden;
        let cin = c.in_channels();
        let k = c.conv_channels;

        let mut d_d2 = dense_backward(
            &self.out_node_w,
            &cache.d2[..l],
            &d_out[..d],
            &mut g.out_node_w,
            &mut g.out_node_b,
        );
        d_d2.extend(dense_backward(
            &self.out_edge_w,
            &cache.d2[l..],
            &d_out[d..],
            &mut g.out_edge_w,
            &mut g.out_edge_b,
        ));
        let pre = tanh_backward(&cache.d2, &d_d2);
        let d_d1 = conv_backward(
            &self.dconv2_w,
            &cache.d1,
            &pre,
            k,
            l,
            c.kernel,
            &mut g.dconv2_w,
            &mut g.dconv2_b,
        );
        let pre = tanh_backward(&cache.d1, &d_d1);
        let d_g2 = conv_backward(
            &self.dconv1_w,
            &cache.g2,
            &pre,
            k,
            l,
            c.kernel,
            &mut g.dconv1_w,
            &mut g.dconv1_b,
        );
        let pre = tanh_backward(&cache.g2, &d_g2);
        let d_g1 = dense_backward(&self.dfc2_w, &cache.g1, &pre, &mut g.dfc2_w, &mut g.dfc2_b);
        let pre = tanh_backward(&cache.g1, &d_g1);
        let d_z = dense_backward(&self.dfc1_w, &cache.z, &pre, &mut g.dfc1_w, &mut g.dfc1_b);
        let pre = tanh_backward(&cache.z, &d_z);
        let d_f1 = dense_backward(&self.fc2_w, &cache.f1, &pre, &mut g.fc2_w, &mut g.fc2_b);
        let pre = tanh_backward(&cache.f1, &d_f1);
        let d_c2 = dense_backward(&self.fc1_w, &cache.c2, &pre, &mut g.fc1_w, &mut g.fc1_b);
        let pre = tanh_backward(&cache.c2, &d_c2);
        let d_c1 = conv_backward(
            &self.conv2_w,
            &cache.c1,
            &pre,
            k,
            l,
            c.kernel,
            &mut g.conv2_w,
            &mut g.conv2_b,
        );
        let pre = tanh_backward(&cache.c1, &d_c1);
        let d_c0 = conv_backward(
            &self.conv1_w,
            &cache.c0,
            &pre,
            cin,
            l,
            c.kernel,
            &mut g.conv1_w,
            &mut g.conv1_b,
        );
        let pre_node = tanh_backward(&cache.node_h, &d_c0[..l]);
        let pre_edge = tanh_backward(&cache.edge_h, &d_c0[l..]);
        dense_backward(&self.node_w, &cache.input[..d], &pre_node, &mut g.node_w, &mut g.node_b);
        dense_backward(&self.edge_w, &cache.input[d..], &pre_edge, &mut g.edge_w, &mut g.edge_b);
    }
}

impl ParamSet for AeNet {
    fn blocks(&self) -> Vec<(&'static str, &Mat)> {
        vec![
            ("node_w", &self.node_w),
            ("node_b", &self.node_b),
            ("edge_w", &self.edge_w),
            ("edge_b", &self.edge_b),
            ("conv1_w", &self.conv1_w),
            ("conv1_b", &self.conv1_b),
            ("conv2_w", &self.conv2_w),
            ("conv2_b", &self.conv2_b),
            ("fc1_w", &self.fc1_w),
            ("fc1_b", &self.fc1_b),
            ("fc2_w", &self.fc2_w),
            ("fc2_b", &self.fc2_b),
            ("dfc1_w", &self.dfc1_w),
            ("dfc1_b", &self.dfc1_b),
            ("dfc2_w", &self.dfc2_w),
            ("dfc2_b", &self.dfc2_b),
            ("dconv1_w", &self.dconv1_w),
            ("dconv1_b", &self.dconv1_b),
            ("dconv2_w", &self.dconv2_w),
            ("dconv2_b", &self.dconv2_b),
            ("out_node_w", &self.out_node_w),
            ("out_node_b", &self.out_node_b),
            ("out_edge_w", &self.out_edge_w),
            ("out_edge_b", &self.out_edge_b),
        ]
    }

    fn blocks_mut(&mut self) -> Vec<&mut Mat> {
        self.blocks_mut_named().into_iter().map(|(_, m)| m).collect()
    }
}
