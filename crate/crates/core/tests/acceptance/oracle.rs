//! Straightforward f64 reference for the training loss, written without the
//! library's kernels: direct loops for the MLP, convolutions, pooling, grams.

use std::f64::consts::PI;

pub struct Layer {
    pub fan_in: usize,
    pub fan_out: usize,
    /// `w[o * fan_in + i]`
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

pub struct Mlp {
    pub layers: Vec<Layer>,
    /// 1-based index of the layer that also sees the network input.
    pub skip: usize,
}

pub struct ConvW {
    pub cin: usize,
    pub cout: usize,
    /// `w[((o * cin + i) * 3 + ky) * 3 + kx]`
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

/// Feature map `c × h × w`.
#[derive(Clone)]
pub struct Fm {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub d: Vec<f64>,
}

pub fn pe(p: f64, n_f: usize) -> Vec<f64> {
    let mut v = Vec::new();
    for k in 0..n_f {
        let a = 2f64.powi(k as i32) * PI * p;
        v.push(a.sin());
        v.push(a.cos());
    }
    v
}

fn linspace(i: usize, n: usize) -> f64 {
    if n == 1 {
        0.0
    } else {
        -1.0 + 2.0 * i as f64 / (n - 1) as f64
    }
}

impl Mlp {
    fn eval(&self, x: &[f64]) -> [f64; 3] {
        let mut h = x.to_vec();
        let n = self.layers.len();
        for (k, l) in self.layers.iter().enumerate() {
            if k + 1 == self.skip {
                h.extend_from_slice(x);
            }
            assert_eq!(h.len(), l.fan_in);
            let mut out = vec![0.0; l.fan_out];
            for o in 0..l.fan_out {
                let mut s = l.b[o];
                for i in 0..l.fan_in {
                    s += l.w[o * l.fan_in + i] * h[i];
                }
                out[o] = if k + 1 == n { 1.0 / (1.0 + (-s).exp()) } else { s.max(0.0) };
            }
            h = out;
        }
        [h[0], h[1], h[2]]
    }

    /// RGB image (`h × w × 3`) for latent `z` on the align-corners grid.
    pub fn render(&self, z: &[f64], h: usize, w: usize, n_f: usize) -> Vec<f64> {
        let mut img = Vec::with_capacity(h * w * 3);
        for i in 0..h {
            for j in 0..w {
                let mut x = z.to_vec();
                x.extend(pe(linspace(j, w), n_f));
                x.extend(pe(linspace(i, h), n_f));
                img.extend(self.eval(&x));
            }
        }
        img
    }
}

fn conv(x: &Fm, cw: &ConvW) -> Fm {
    assert_eq!(x.c, cw.cin);
    let (h, w) = (x.h, x.w);
    let mut d = vec![0.0; cw.cout * h * w];
    for o in 0..cw.cout {
        for y in 0..h {
            for xx in 0..w {
                let mut s = cw.b[o];
                for i in 0..cw.cin {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let sy = y as isize + ky as isize - 1;
                            let sx = xx as isize + kx as isize - 1;
                            if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                continue;
                            }
                            s += cw.w[((o * cw.cin + i) * 3 + ky) * 3 + kx]
                                * x.d[(i * h + sy as usize) * w + sx as usize];
                        }
                    }
                }
                d[(o * h + y) * w + xx] = s;
            }
        }
    }
    Fm { c: cw.cout, h, w, d }
}

fn relu(x: &Fm) -> Fm {
    Fm {
        d: x.d.iter().map(|v| v.max(0.0)).collect(),
        ..x.clone()
    }
}

fn pool(x: &Fm) -> Fm {
    let (oh, ow) = (x.h / 2, x.w / 2);
    let mut d = vec![0.0; x.c * oh * ow];
    for c in 0..x.c {
        for y in 0..oh {
            for xx in 0..ow {
                let mut m = f64::NEG_INFINITY;
                for dy in 0..2 {
                    for dx in 0..2 {
                        m = m.max(x.d[(c * x.h + 2 * y + dy) * x.w + 2 * xx + dx]);
                    }
                }
                d[(c * oh + y) * ow + xx] = m;
            }
        }
    }
    Fm { c: x.c, h: oh, w: ow, d }
}

/// relu1_1, relu1_2, relu2_1, relu2_2, relu3_1 of an HWC image in [0, 1].
pub fn shallow_relu_features(img: &[f64], h: usize, w: usize, convs: &[ConvW]) -> Vec<Fm> {
    const MEAN: [f64; 3] = [0.485, 0.456, 0.406];
    const STD: [f64; 3] = [0.229, 0.224, 0.225];
    let mut d = vec![0.0; 3 * h * w];
    for p in 0..h * w {
        for c in 0..3 {
            d[c * h * w + p] = (img[p * 3 + c] - MEAN[c]) / STD[c];
        }
    }
    let x = Fm { c: 3, h, w, d };
    let r11 = relu(&conv(&x, &convs[0]));
    let r12 = relu(&conv(&r11, &convs[1]));
    let r21 = relu(&conv(&pool(&r12), &convs[2]));
    let r22 = relu(&conv(&r21, &convs[3]));
    let r31 = relu(&conv(&pool(&r22), &convs[4]));
    vec![r11, r12, r21, r22, r31]
}

pub fn gram(f: &Fm) -> Vec<f64> {
    let n = f.h * f.w;
    let mut g = vec![0.0; f.c * f.c];
    for a in 0..f.c {
        for b in 0..f.c {
            let mut s = 0.0;
            for p in 0..n {
                s += f.d[a * n + p] * f.d[b * n + p];
            }
            g[a * f.c + b] = s / (f.c * n) as f64;
        }
    }
    g
}

pub fn reweight(x: f64, kappa: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        -x * (1.0 - x.powf(kappa)).max(1e-6).ln()
    }
}

pub struct Problem {
    pub convs: Vec<ConvW>,
    pub content: Vec<Fm>,
    pub style_grams: Vec<Vec<f64>>,
    pub h: usize,
    pub w: usize,
    pub n_f: usize,
    pub content_weight: f64,
    pub style_weight: f64,
    pub kappa: f64,
}

impl Problem {
    pub fn total(&self, mlp: &Mlp, z: &[f64], alpha: f64) -> f64 {
        let img = mlp.render(z, self.h, self.w, self.n_f);
        let feats = shallow_relu_features(&img, self.h, self.w, &self.convs);
        let (gen_c, tgt_c) = (&feats[4], &self.content[4]);
        let ss: f64 = gen_c.d.iter().zip(&tgt_c.d).map(|(a, b)| (a - b) * (a - b)).sum();
        let content = self.content_weight * (ss / gen_c.d.len() as f64).sqrt();
        let mut style = 0.0;
        for (f, t) in feats.iter().zip(&self.style_grams) {
            let g = gram(f);
            style += g.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        }
        let style = self.style_weight * style;
        reweight(alpha, self.kappa) * content + reweight(1.0 - alpha, self.kappa) * style
    }
}
