//! Space-time diagram rendering: space horizontal, time downward, black
//! pixel = occupied site. PBM P4 is the canonical byte-exact format; SVG is
//! offered for embedding in documents.

use coopbranch::Configuration;

/// Packs sampled states into a binary PBM (P4). Row `r` is the `r`-th
/// sample, so time runs top to bottom; 1 bits render black.
#[must_use]
pub fn render_pbm(states: &[&Configuration], width: u32) -> Vec<u8> {
    let height = states.len();
    let mut out = format!("P4\n# schema: coopbranch.diagram.v1\n{width} {height}\n").into_bytes();
    let row_bytes = (width as usize).div_ceil(8);
    for state in states {
        let mut row = vec![0u8; row_bytes];
        for site in 0..width {
            if state.is_occupied(site) {
                row[(site / 8) as usize] |= 0x80 >> (site % 8);
            }
        }
        out.extend_from_slice(&row);
    }
    out
}

/// Renders the same picture as one SVG rect per horizontal run of occupied
/// sites, on a white background. Integer coordinates keep the bytes stable.
#[must_use]
pub fn render_svg(states: &[&Configuration], width: u32) -> Vec<u8> {
    let height = states.len();
    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {width} {height}\" \
         width=\"{width}\" height=\"{height}\" shape-rendering=\"crispEdges\">\n"
    ));
    out.push_str("<!-- schema: coopbranch.diagram.v1 -->\n");
    out.push_str(&format!(
        "<rect width=\"{width}\" height=\"{height}\" fill=\"#ffffff\"/>\n"
    ));
    for (row, state) in states.iter().enumerate() {
        let mut site = 0u32;
        while site < width {
            if state.is_occupied(site) {
                let start = site;
                while site < width && state.is_occupied(site) {
                    site += 1;
                }
                out.push_str(&format!(
                    "<rect x=\"{start}\" y=\"{row}\" width=\"{}\" height=\"1\" fill=\"#000000\"/>\n",
                    site - start
                ));
            } else {
                site += 1;
            }
        }
    }
    out.push_str("</svg>\n");
    out.into_bytes()
}
