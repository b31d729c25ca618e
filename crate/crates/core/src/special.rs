//! Reserved token ids, identical in every vocabulary.

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
pub const BT: u32 = 4;

pub const PAD_TOKEN: &str = "<pad>";
pub const BOS_TOKEN: &str = "<bos>";
pub const EOS_TOKEN: &str = "<eos>";
pub const UNK_TOKEN: &str = "<unk>";
pub const BT_TOKEN: &str = "<BT>";

/// In id order.
pub const RESERVED: [&str; 5] = [PAD_TOKEN, BOS_TOKEN, EOS_TOKEN, UNK_TOKEN, BT_TOKEN];

pub fn is_reserved(token: &str) -> bool {
    RESERVED.contains(&token)
}
