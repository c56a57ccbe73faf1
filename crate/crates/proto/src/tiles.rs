//! Tile deltas of the flattened image.
//!
//! The image is cut into `tile × tile` squares in row-major order (edge tiles
//! are clipped). A delta lists runs of `skip` unchanged tiles followed by
//! `count` changed tiles whose RGB bytes, tile after tile and row-major
//! within a tile, are base64 in `data`. A delta with `reset` starts from a
//! black canvas of the new size.

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::ProtoError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileRun {
    pub skip: u32,
    pub count: u32,
    pub data: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileDelta {
    pub width: u32,
    pub height: u32,
    pub tile: u32,
    pub reset: bool,
    pub runs: Vec<TileRun>,
}

impl TileDelta {
    pub fn is_empty(&self) -> bool {
        !self.reset && self.runs.is_empty()
    }

    pub fn grid(&self) -> (usize, usize) {
        grid(self.width as usize, self.height as usize, self.tile as usize)
    }
}

fn grid(w: usize, h: usize, tile: usize) -> (usize, usize) {
    (w.div_ceil(tile), h.div_ceil(tile))
}

/// Pixel rectangle `(x0, y0, x1, y1)` of tile `t`.
fn tile_rect(t: usize, w: usize, h: usize, tile: usize) -> (usize, usize, usize, usize) {
    let (gx, _) = grid(w, h, tile);
    let (tx, ty) = (t % gx, t / gx);
    let (x0, y0) = (tx * tile, ty * tile);
    (x0, y0, (x0 + tile).min(w), (y0 + tile).min(h))
}

fn tile_bytes(rgb: &[u8], w: usize, rect: (usize, usize, usize, usize), out: &mut Vec<u8>) {
    let (x0, y0, x1, y1) = rect;
    for y in y0..y1 {
        out.extend_from_slice(&rgb[3 * (y * w + x0)..3 * (y * w + x1)]);
    }
}

/// Server side: remembers what the client holds and emits differences.
#[derive(Debug, Clone)]
pub struct TileEncoder {
    tile: usize,
    width: usize,
    height: usize,
    held: Vec<u8>,
}

impl TileEncoder {
    pub fn new(tile: u32) -> Self {
        assert!(tile > 0, "tile size must be positive");
        Self {
            tile: tile as usize,
            width: 0,
            height: 0,
            held: Vec::new(),
        }
    }

    pub fn encode(&mut self, width: u32, height: u32, rgb: &[u8]) -> TileDelta {
        let (w, h) = (width as usize, height as usize);
        assert_eq!(rgb.len(), 3 * w * h, "raster size");
        let reset = (w, h) != (self.width, self.height);
        if reset {
            self.width = w;
            self.height = h;
            self.held = vec![0; rgb.len()];
        }
        let (gx, gy) = grid(w, h, self.tile);
        let mut runs = Vec::new();
        let mut skip = 0u32;
        let mut pending: Option<(u32, u32, Vec<u8>)> = None;
        let (mut cur, mut old) = (Vec::new(), Vec::new());
        for t in 0..gx * gy {
            let rect = tile_rect(t, w, h, self.tile);
            cur.clear();
            old.clear();
            tile_bytes(rgb, w, rect, &mut cur);
            tile_bytes(&self.held, w, rect, &mut old);
            if cur == old {
                if let Some((s, c, data)) = pending.take() {
                    runs.push(TileRun {
                        skip: s,
                        count: c,
                        data: BASE64.encode(data),
                    });
                }
                skip += 1;
            } else {
                match &mut pending {
                    Some((_, c, data)) => {
                        *c += 1;
                        data.extend_from_slice(&cur);
                    }
                    None => {
                        pending = Some((skip, 1, cur.clone()));
                        skip = 0;
                    }
                }
            }
        }
        if let Some((s, c, data)) = pending {
            runs.push(TileRun {
                skip: s,
                count: c,
                data: BASE64.encode(data),
            });
        }
        self.held.copy_from_slice(rgb);
        TileDelta {
            width,
            height,
            tile: self.tile as u32,
            reset,
            runs,
        }
    }
}

/// Client side: the flattened image assembled from deltas.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TileCanvas {
    pub width: u32,
    pub height: u32,
    pub rgb: Vec<u8>,
}

impl TileCanvas {
    /// Applies a delta; on error the canvas is left unchanged.
    pub fn apply(&mut self, delta: &TileDelta) -> Result<(), ProtoError> {
        let (w, h, tile) = (delta.width as usize, delta.height as usize, delta.tile as usize);
        if tile == 0 {
            return Err(ProtoError::Tiles("tile size 0".into()));
        }
        if !delta.reset && (delta.width, delta.height) != (self.width, self.height) {
            return Err(ProtoError::Tiles(format!(
                "delta for {w}x{h} on a {}x{} canvas without reset",
                self.width, self.height
            )));
        }
        let mut next = if delta.reset { vec![0; 3 * w * h] } else { self.rgb.clone() };
        let (gx, gy) = grid(w, h, tile);
        let mut t = 0usize;
        for run in &delta.runs {
            t += run.skip as usize;
            let data = BASE64.decode(&run.data)?;
            let mut at = 0usize;
            for _ in 0..run.count {
                if t >= gx * gy {
                    return Err(ProtoError::Tiles(format!("tile {t} outside a {gx}x{gy} grid")));
                }
                let (x0, y0, x1, y1) = tile_rect(t, w, h, tile);
                let row = 3 * (x1 - x0);
                for y in y0..y1 {
                    let src = data
                        .get(at..at + row)
                        .ok_or_else(|| ProtoError::Tiles("run data too short".into()))?;
                    next[3 * (y * w + x0)..3 * (y * w + x1)].copy_from_slice(src);
                    at += row;
                }
                t += 1;
            }
            if at != data.len() {
                return Err(ProtoError::Tiles("run data too long".into()));
            }
        }
        self.width = delta.width;
        self.height = delta.height;
        self.rgb = next;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unchanged_image_sends_nothing() {
        let mut enc = TileEncoder::new(4);
        let img = vec![7u8; 3 * 10 * 6];
        let first = enc.encode(10, 6, &img);
        assert!(first.reset);
        assert_eq!(first.runs.len(), 1);
        assert_eq!(first.runs[0].count, 6);
        assert!(enc.encode(10, 6, &img).is_empty());
    }

    #[test]
    fn single_pixel_change_sends_one_clipped_tile() {
        let mut enc = TileEncoder::new(4);
        let mut img = vec![0u8; 3 * 10 * 6];
        enc.encode(10, 6, &img);
        img[3 * (5 * 10 + 9)] = 200;
        let d = enc.encode(10, 6, &img);
        // Tile 5 is the bottom-right one: 2 columns by 2 rows.
        assert_eq!(d.runs, vec![TileRun { skip: 5, count: 1, data: BASE64.encode([0, 0, 0, 0, 0, 0, 0, 0, 0, 200, 0, 0]) }]);
    }

    #[test]
    fn invalid_deltas_are_rejected() {
        let mut canvas = TileCanvas::default();
        let over = TileDelta {
            width: 4,
            height: 4,
            tile: 4,
            reset: true,
            runs: vec![TileRun {
                skip: 1,
                count: 1,
                data: BASE64.encode([0u8; 48]),
            }],
        };
        assert!(canvas.apply(&over).is_err());
        let short = TileDelta {
            runs: vec![TileRun {
                skip: 0,
                count: 1,
                data: BASE64.encode([0u8; 47]),
            }],
            ..over.clone()
        };
        assert!(canvas.apply(&short).is_err());
        let no_reset = TileDelta {
            reset: false,
            runs: vec![],
            ..over
        };
        assert!(canvas.apply(&no_reset).is_err());
        assert_eq!(canvas, TileCanvas::default());
    }
}
