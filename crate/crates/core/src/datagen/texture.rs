use rand::Rng;

use crate::field::Image;
use crate::rng::{domain, SeedTree};

const LATTICE: usize = 64;

/// Periodic value noise on a `64 x 64` lattice with smoothstep interpolation.
#[derive(Debug, Clone)]
struct ValueNoise {
    table: Vec<f64>,
    period: f64,
}

impl ValueNoise {
    fn new(rng: &mut impl Rng, period: f64) -> Self {
        Self {
            table: (0..LATTICE * LATTICE)
                .map(|_| rng.random::<f64>())
                .collect(),
            period,
        }
    }

    fn sample(&self, x: f64, y: f64) -> f64 {
        let (u, v) = (x / self.period, y / self.period);
        let (fx, fy) = (u.floor(), v.floor());
        let (tx, ty) = (smooth(u - fx), smooth(v - fy));
        let wrap = |k: f64| (k.rem_euclid(LATTICE as f64)) as usize;
        let (x0, y0) = (wrap(fx), wrap(fy));
        let (x1, y1) = ((x0 + 1) % LATTICE, (y0 + 1) % LATTICE);
        let t = |xx: usize, yy: usize| self.table[yy * LATTICE + xx];
        let top = t(x0, y0) + (t(x1, y0) - t(x0, y0)) * tx;
        let bottom = t(x0, y1) + (t(x1, y1) - t(x0, y1)) * tx;
        top + (bottom - top) * ty
    }
}

#[inline]
fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

#[derive(Debug, Clone)]
struct Disc {
    cx: f64,
    cy: f64,
    radius: f64,
    colour: [f64; 3],
}

/// Seeded procedural RGB texture defined on the continuous plane: layered
/// value noise plus a few soft-edged discs. Sampling at shifted coordinates
/// gives exactly translated content.
#[derive(Debug, Clone)]
pub struct ProceduralTexture {
    layers: Vec<[ValueNoise; 3]>,
    weights: Vec<f64>,
    discs: Vec<Disc>,
}

impl ProceduralTexture {
    /// `extent` bounds the region (in pixels) where discs are scattered.
    pub fn new(seed: u64, extent: f64) -> Self {
        let mut rng = SeedTree::new(seed).stream(domain::TEXTURE, 0);
        let periods = [48.0, 24.0, 12.0, 6.0];
        let weights = vec![0.45, 0.3, 0.17, 0.08];
        let layers = periods
            .iter()
            .map(|&p| {
                [
                    ValueNoise::new(&mut rng, p),
                    ValueNoise::new(&mut rng, p),
                    ValueNoise::new(&mut rng, p),
                ]
            })
            .collect();
        let discs = (0..6)
            .map(|_| Disc {
                cx: rng.random_range(0.0..extent),
                cy: rng.random_range(0.0..extent),
                radius: rng.random_range(4.0..(extent / 8.0).max(5.0)),
                colour: [rng.random(), rng.random(), rng.random()],
            })
            .collect();
        Self {
            layers,
            weights,
            discs,
        }
    }

    pub fn sample(&self, x: f64, y: f64) -> [f64; 3] {
        let total: f64 = self.weights.iter().sum();
        let mut rgb = [0.0; 3];
        for (layer, w) in self.layers.iter().zip(&self.weights) {
            for (c, noise) in layer.iter().enumerate() {
                rgb[c] += w * noise.sample(x, y);
            }
        }
        for v in &mut rgb {
            // Stretch the noise contrast around mid-grey.
            *v = (0.5 + 1.6 * (*v / total - 0.5)).clamp(0.0, 1.0);
        }
        for d in &self.discs {
            let dist = ((x - d.cx).powi(2) + (y - d.cy).powi(2)).sqrt();
            let alpha = 0.8 * (1.0 - smooth(((dist - d.radius) / 2.0 + 0.5).clamp(0.0, 1.0)));
            for c in 0..3 {
                rgb[c] = rgb[c] * (1.0 - alpha) + d.colour[c] * alpha;
            }
        }
        rgb
    }

    /// Renders pixel `(i, j)` from texture coordinate `(j + dx, i + dy)`.
    pub fn render(&self, h: usize, w: usize, dx: f64, dy: f64) -> Image {
        let mut img = Image::zeros(3, h, w);
        for i in 0..h {
            for j in 0..w {
                let rgb = self.sample(j as f64 + dx, i as f64 + dy);
                for (c, v) in rgb.into_iter().enumerate() {
                    img.set(c, i, j, v);
                }
            }
        }
        img
    }
}
