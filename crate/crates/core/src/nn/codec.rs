//! Fixed 100-character printable table used by every character model.
//!
//! Layout: digits (0-9), lowercase (10-35), uppercase (36-61), the 32 ASCII
//! punctuation characters in ASCII order (62-93), then space, tab, LF, CR,
//! VT and FF (94-99). Everything else encodes to [`UNKNOWN_INDEX`].

/// Bumped whenever the table changes; stored in every model bundle.
pub const CODEC_VERSION: u32 = 1;
pub const TABLE_SIZE: usize = 100;
pub const UNKNOWN_INDEX: u8 = 100;
/// Rows in an embedding table: the printable table plus the unknown row.
pub const EMBEDDING_ROWS: usize = TABLE_SIZE + 1;

pub const PUNCTUATION: &str = "!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~";
const WHITESPACE: [char; 6] = [' ', '\t', '\n', '\r', '\x0b', '\x0c'];

#[derive(Debug, Clone)]
pub struct CharCodec {
    table: Vec<char>,
    lookup: [u8; 128],
}

impl Default for CharCodec {
    fn default() -> Self {
        Self::new()
    }
}

impl CharCodec {
    /// Process-wide instance.
    pub fn shared() -> &'static CharCodec {
        static CODEC: std::sync::OnceLock<CharCodec> = std::sync::OnceLock::new();
        CODEC.get_or_init(CharCodec::new)
    }

    pub fn new() -> Self {
        let table: Vec<char> = ('0'..='9')
            .chain('a'..='z')
            .chain('A'..='Z')
            .chain(PUNCTUATION.chars())
            .chain(WHITESPACE)
            .collect();
        debug_assert_eq!(table.len(), TABLE_SIZE);
        let mut lookup = [UNKNOWN_INDEX; 128];
        for (i, c) in table.iter().enumerate() {
            lookup[*c as usize] = i as u8;
        }
        Self { table, lookup }
    }

    pub fn table(&self) -> &[char] {
        &self.table
    }

    #[inline]
    pub fn encode_char(&self, c: char) -> u8 {
        if c.is_ascii() {
            self.lookup[c as usize]
        } else {
            UNKNOWN_INDEX
        }
    }

    /// One index per character.
    pub fn encode(&self, text: &str) -> Vec<u8> {
        text.chars().map(|c| self.encode_char(c)).collect()
    }

    /// One index per byte; non-ASCII bytes map to the unknown index.
    pub fn encode_bytes(&self, bytes: &[u8]) -> Vec<u8> {
        bytes
            .iter()
            .map(|&b| {
                if b < 128 {
                    self.lookup[b as usize]
                } else {
                    UNKNOWN_INDEX
                }
            })
            .collect()
    }

    /// Inverse of [`encode`](Self::encode); the unknown index decodes to U+FFFD.
    pub fn decode(&self, indices: &[u8]) -> String {
        indices
            .iter()
            .map(|&i| {
                self.table
                    .get(i as usize)
                    .copied()
                    .unwrap_or(char::REPLACEMENT_CHARACTER)
            })
            .collect()
    }

    /// Printable label for an embedding row, used in projection exports.
    pub fn row_label(&self, index: usize) -> String {
        match self.table.get(index) {
            Some(' ') => "<space>".to_string(),
            Some('\t') => "<tab>".to_string(),
            Some('\n') => "<lf>".to_string(),
            Some('\r') => "<cr>".to_string(),
            Some('\x0b') => "<vt>".to_string(),
            Some('\x0c') => "<ff>".to_string(),
            Some(c) => c.to_string(),
            None => "<unk>".to_string(),
        }
    }
}

/// True for the 32 ASCII punctuation characters.
pub fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
}
