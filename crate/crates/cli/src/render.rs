//! RGB rendering of label maps.

use partpq_core::LabelMap;

const WHITE: [u8; 3] = [255, 255, 255];

/// A fixed color per `(sid, pid)`; void is black.
pub fn color(sid: u16, pid: u8) -> [u8; 3] {
    if sid == 0 {
        return [0, 0, 0];
    }
    // splitmix64 finalizer over the packed pair
    let mut z = (u64::from(sid) << 8 | u64::from(pid)).wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^= z >> 31;
    let b = z.to_le_bytes();
    // keep clear of black and white so contours stay visible
    [b[0] / 4 * 3 + 32, b[1] / 4 * 3 + 32, b[2] / 4 * 3 + 32]
}

/// Colors every pixel by its `(sid, pid)` and draws white contours on the
/// boundary of each things instance.
pub fn colorize(map: &LabelMap) -> Vec<u8> {
    let (w, h) = (map.width() as usize, map.height() as usize);
    let px = map.pixels();
    let mut rgb = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        for x in 0..w {
            let t = px[y * w + x];
            let key = (t.sid, t.iid);
            let edge = t.iid.is_some() && {
                let differs = |nx: usize, ny: usize| {
                    let n = px[ny * w + nx];
                    (n.sid, n.iid) != key
                };
                (x > 0 && differs(x - 1, y))
                    || (x + 1 < w && differs(x + 1, y))
                    || (y > 0 && differs(x, y - 1))
                    || (y + 1 < h && differs(x, y + 1))
            };
            rgb.extend_from_slice(&if edge { WHITE } else { color(t.sid, t.pid) });
        }
    }
    rgb
}

#[cfg(test)]
mod tests {
    use super::*;
    use partpq_core::LabelTriple;

    #[test]
    fn contour_only_on_instances() {
        let mut map = LabelMap::filled(5, 5, LabelTriple::stuff(7)).unwrap();
        for y in 1..4 {
            for x in 1..4 {
                map.set(x, y, LabelTriple::thing(26, 1));
            }
        }
        let rgb = colorize(&map);
        let at = |x: usize, y: usize| &rgb[(y * 5 + x) * 3..(y * 5 + x) * 3 + 3];
        assert_eq!(at(1, 1), WHITE);
        assert_eq!(at(2, 2), color(26, 0));
        assert_eq!(at(0, 0), color(7, 0));
        assert_ne!(color(26, 1), color(26, 2));
    }
}
