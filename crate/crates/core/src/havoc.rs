//! Stacked byte-level havoc mutation.

use rand::Rng;

/// Arithmetic mutations add or subtract at most this much.
pub const ARITH_MAX: u8 = 35;

const INTERESTING_8: [i8; 9] = [-128, -1, 0, 1, 16, 32, 64, 100, 127];
const INTERESTING_16: [i16; 10] = [-32768, -129, 128, 255, 256, 512, 1000, 1024, 4096, 32767];
const INTERESTING_32: [i32; 8] = [
    -2147483648,
    -100663046,
    -32769,
    32768,
    65535,
    65536,
    100663045,
    2147483647,
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HavocOp {
    BitFlip,
    ByteSet,
    ByteArith,
    Interesting,
    BlockOverwrite,
    ByteSwap,
    Insert,
    Delete,
}

const FIXED_OPS: [HavocOp; 6] = [
    HavocOp::BitFlip,
    HavocOp::ByteSet,
    HavocOp::ByteArith,
    HavocOp::Interesting,
    HavocOp::BlockOverwrite,
    HavocOp::ByteSwap,
];

const ALL_OPS: [HavocOp; 8] = [
    HavocOp::BitFlip,
    HavocOp::ByteSet,
    HavocOp::ByteArith,
    HavocOp::Interesting,
    HavocOp::BlockOverwrite,
    HavocOp::ByteSwap,
    HavocOp::Insert,
    HavocOp::Delete,
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HavocConfig {
    /// Each mutant stacks `1..=stack_max` operators.
    pub stack_max: usize,
    /// Upper bound on bytes touched by one operator, and on the net length
    /// change of one mutant.
    pub bytes_per_op: usize,
    pub allow_resize: bool,
    pub max_len: usize,
}

impl HavocConfig {
    /// Neighbourhood sampler used by local search: few small, length
    /// preserving edits.
    pub fn local(stack_max: usize, bytes_per_op: usize, max_len: usize) -> Self {
        HavocConfig {
            stack_max,
            bytes_per_op,
            allow_resize: false,
            max_len,
        }
    }

    /// Conventional havoc: deep stacks, length changes allowed.
    pub fn conventional(max_len: usize) -> Self {
        HavocConfig {
            stack_max: 16,
            bytes_per_op: 4,
            allow_resize: true,
            max_len,
        }
    }
}

pub fn havoc_mutate<R: Rng + ?Sized>(seed: &[u8], cfg: &HavocConfig, rng: &mut R) -> Vec<u8> {
    let mut buf = seed.to_vec();
    let stack = rng.gen_range(1..=cfg.stack_max.max(1));
    let ops: &[HavocOp] = if cfg.allow_resize { &ALL_OPS } else { &FIXED_OPS };
    for _ in 0..stack {
        let op = ops[rng.gen_range(0..ops.len())];
        apply_op(&mut buf, seed.len(), op, cfg, rng);
    }
    buf
}

/// Applies one operator in place. Operators that cannot apply (empty
/// buffer, length limits) leave the buffer unchanged.
pub fn apply_op<R: Rng + ?Sized>(
    buf: &mut Vec<u8>,
    original_len: usize,
    op: HavocOp,
    cfg: &HavocConfig,
    rng: &mut R,
) {
    let per_op = cfg.bytes_per_op.max(1);
    if buf.is_empty() && op != HavocOp::Insert {
        return;
    }
    match op {
        HavocOp::BitFlip => {
            let pos = rng.gen_range(0..buf.len());
            buf[pos] ^= 1 << rng.gen_range(0..8);
        }
        HavocOp::ByteSet => {
            let pos = rng.gen_range(0..buf.len());
            buf[pos] = rng.gen();
        }
        HavocOp::ByteArith => {
            let pos = rng.gen_range(0..buf.len());
            let delta = rng.gen_range(1..=ARITH_MAX);
            buf[pos] = if rng.gen() {
                buf[pos].wrapping_add(delta)
            } else {
                buf[pos].wrapping_sub(delta)
            };
        }
        HavocOp::Interesting => {
            let widths: Vec<usize> = [1usize, 2, 4]
                .into_iter()
                .filter(|w| *w <= per_op && *w <= buf.len())
                .collect();
            let width = widths[rng.gen_range(0..widths.len())];
            let pos = rng.gen_range(0..=buf.len() - width);
            let big_endian: bool = rng.gen();
            let bytes: Vec<u8> = match width {
                1 => vec![INTERESTING_8[rng.gen_range(0..INTERESTING_8.len())] as u8],
                2 => {
                    let v = INTERESTING_16[rng.gen_range(0..INTERESTING_16.len())];
                    if big_endian { v.to_be_bytes() } else { v.to_le_bytes() }.to_vec()
                }
                _ => {
                    let v = INTERESTING_32[rng.gen_range(0..INTERESTING_32.len())];
                    if big_endian { v.to_be_bytes() } else { v.to_le_bytes() }.to_vec()
                }
            };
            buf[pos..pos + width].copy_from_slice(&bytes);
        }
        HavocOp::BlockOverwrite => {
            let len = rng.gen_range(1..=per_op.min(buf.len()));
            let pos = rng.gen_range(0..=buf.len() - len);
            if rng.gen() {
                let fill: u8 = rng.gen();
                buf[pos..pos + len].fill(fill);
            } else {
                for b in &mut buf[pos..pos + len] {
                    *b = rng.gen();
                }
            }
        }
        HavocOp::ByteSwap => {
            if per_op < 2 || buf.len() < 2 {
                return;
            }
            let a = rng.gen_range(0..buf.len());
            let b = rng.gen_range(0..buf.len());
            buf.swap(a, b);
        }
        HavocOp::Insert => {
            if !cfg.allow_resize {
                return;
            }
            let grown = buf.len().saturating_sub(original_len);
            let room = per_op
                .saturating_sub(grown)
                .min(cfg.max_len.saturating_sub(buf.len()));
            if room == 0 {
                return;
            }
            let len = rng.gen_range(1..=room);
            let pos = rng.gen_range(0..=buf.len());
            let fill: u8 = rng.gen();
            buf.splice(pos..pos, std::iter::repeat_n(fill, len));
        }
        HavocOp::Delete => {
            if !cfg.allow_resize {
                return;
            }
            let shrunk = original_len.saturating_sub(buf.len());
            let room = per_op
                .saturating_sub(shrunk)
                .min(buf.len().saturating_sub(1));
            if room == 0 {
                return;
            }
            let len = rng.gen_range(1..=room);
            let pos = rng.gen_range(0..=buf.len() - len);
            buf.drain(pos..pos + len);
        }
    }
}
