/// Mixes `keys` into `base` with splitmix64 so each key tuple gets an
/// independent stream.
pub fn derive_seed(base: u64, keys: &[u64]) -> u64 {
    let mut h = base ^ 0x9E37_79B9_7F4A_7C15;
    for v in keys {
        h = splitmix(h ^ v.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
