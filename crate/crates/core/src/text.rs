//! Byte-budgeted string clipping shared by prompt assembly and result summaries.

fn floor_char_boundary(text: &str, mut index: usize) -> usize {
    while index > 0 && !text.is_char_boundary(index) {
        index -= 1;
    }
    index
}

fn ceil_char_boundary(text: &str, mut index: usize) -> usize {
    while index < text.len() && !text.is_char_boundary(index) {
        index += 1;
    }
    index
}

fn elision_marker(elided: usize) -> String {
    format!("[... {elided} bytes elided ...]\n")
}

/// Keeps the end of `text` within `max_bytes`, prefixing an elision marker.
/// Snaps to a line start when the kept tail contains a newline.
pub fn keep_tail(text: &str, max_bytes: usize) -> String {
    if text.len() <= max_bytes {
        return text.to_string();
    }
    let marker_len = elision_marker(text.len()).len();
    if max_bytes <= marker_len {
        let start = ceil_char_boundary(text, text.len() - max_bytes);
        return text[start..].to_string();
    }
    let keep = max_bytes - marker_len;
    let mut start = ceil_char_boundary(text, text.len() - keep);
    if let Some(nl) = text[start..].find('\n') {
        if start + nl + 1 < text.len() {
            start += nl + 1;
        }
    }
    let mut out = elision_marker(start);
    out.push_str(&text[start..]);
    out
}

/// Keeps the start of `text` within `max_bytes`, suffixing an elision marker.
pub fn keep_head(text: &str, max_bytes: usize) -> String {
    if text.len() <= max_bytes {
        return text.to_string();
    }
    let marker_len = elision_marker(text.len()).len();
    if max_bytes <= marker_len {
        return text[..floor_char_boundary(text, max_bytes)].to_string();
    }
    let end = floor_char_boundary(text, max_bytes - marker_len);
    let mut out = text[..end].to_string();
    out.push('\n');
    out.push_str(elision_marker(text.len() - end).trim_end());
    debug_assert!(out.len() <= max_bytes);
    out
}

/// Hard cut to at most `max_bytes`, no marker.
pub fn clip(text: &str, max_bytes: usize) -> &str {
    &text[..floor_char_boundary(text, max_bytes.min(text.len()))]
}
