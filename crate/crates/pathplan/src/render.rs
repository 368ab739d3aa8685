//! SVG scene rendering and potential-field dumps.

use crate::geometry::Path;
use crate::potential::GridField;
use crate::scenario::Scenario;
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;

const PX_PER_M: f64 = 20.0;
const PATH_COLORS: [&str; 5] = ["#e53935", "#1e88e5", "#43a047", "#fb8c00", "#8e24aa"];

/// Potential values as CSV, one grid row per line (row 0 first), 6
/// significant digits.
pub fn field_to_csv(field: &GridField) -> String {
    let mut out = String::with_capacity(field.width * field.height * 12);
    for iy in 0..field.height {
        for ix in 0..field.width {
            if ix > 0 {
                out.push(',');
            }
            let v = field.values[field.idx(ix, iy)];
            if v.is_finite() {
                out.push_str(&format!("{v:.5e}"));
            } else {
                out.push_str("inf");
            }
        }
        out.push('\n');
    }
    out
}

/// Blue-to-yellow color ramp over the free-cell value range; occupied cells
/// render dark.
fn field_png(field: &GridField) -> Vec<u8> {
    let mut vmin = f64::INFINITY;
    let mut vmax = f64::NEG_INFINITY;
    for (i, &v) in field.values.iter().enumerate() {
        if v.is_finite() && !field.occupancy[i] {
            vmin = vmin.min(v);
            vmax = vmax.max(v);
        }
    }
    if !vmin.is_finite() || vmax <= vmin {
        vmin = 0.0;
        vmax = 1.0;
    }
    let lo = (40.0, 60.0, 160.0);
    let hi = (250.0, 230.0, 80.0);
    let mut data = Vec::with_capacity(field.width * field.height * 3);
    for iy in (0..field.height).rev() {
        for ix in 0..field.width {
            let idx = field.idx(ix, iy);
            let (r, g, b) = if field.occupancy[idx] {
                (48.0, 48.0, 48.0)
            } else if !field.values[idx].is_finite() {
                (0.0, 0.0, 0.0)
            } else {
                let t = ((field.values[idx] - vmin) / (vmax - vmin)).clamp(0.0, 1.0);
                (
                    lo.0 + t * (hi.0 - lo.0),
                    lo.1 + t * (hi.1 - lo.1),
                    lo.2 + t * (hi.2 - lo.2),
                )
            };
            data.push(r as u8);
            data.push(g as u8);
            data.push(b as u8);
        }
    }
    let mut png_bytes = Vec::new();
    {
        let mut encoder =
            png::Encoder::new(&mut png_bytes, field.width as u32, field.height as u32);
        encoder.set_color(png::ColorType::Rgb);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder.write_header().expect("png header");
        writer.write_image_data(&data).expect("png data");
    }
    png_bytes
}

fn sx(x: f64) -> String {
    format!("{:.2}", x * PX_PER_M)
}

fn sy(y: f64, world_h: f64) -> String {
    format!("{:.2}", (world_h - y) * PX_PER_M)
}

/// Renders the scenario with optional potential underlay and any number of
/// paths. Output is deterministic for identical inputs.
pub fn render_svg(scenario: &Scenario, paths: &[&Path], field: Option<&GridField>) -> String {
    let w = scenario.world.width;
    let h = scenario.world.height;
    let mut out = String::with_capacity(8192);
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{:.0}\" height=\"{:.0}\" viewBox=\"0 0 {:.0} {:.0}\">\n",
        w * PX_PER_M,
        h * PX_PER_M,
        w * PX_PER_M,
        h * PX_PER_M
    ));
    out.push_str(&format!(
        "<rect x=\"0\" y=\"0\" width=\"{:.0}\" height=\"{:.0}\" fill=\"#fafafa\"/>\n",
        w * PX_PER_M,
        h * PX_PER_M
    ));

    if let Some(f) = field {
        let png = field_png(f);
        out.push_str(&format!(
            "<image x=\"0\" y=\"0\" width=\"{:.0}\" height=\"{:.0}\" preserveAspectRatio=\"none\" href=\"data:image/png;base64,{}\"/>\n",
            w * PX_PER_M,
            h * PX_PER_M,
            B64.encode(&png)
        ));
    }

    for obs in &scenario.obstacles {
        let pts: Vec<String> = obs
            .vertices
            .iter()
            .map(|v| format!("{},{}", sx(v.x), sy(v.y, h)))
            .collect();
        out.push_str(&format!(
            "<polygon points=\"{}\" fill=\"#37474f\" stroke=\"#263238\" stroke-width=\"1\"/>\n",
            pts.join(" ")
        ));
    }

    for (i, path) in paths.iter().enumerate() {
        let color = PATH_COLORS[i % PATH_COLORS.len()];
        let pts: Vec<String> = path
            .waypoints
            .iter()
            .map(|p| format!("{},{}", sx(p.x), sy(p.y, h)))
            .collect();
        out.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            pts.join(" ")
        ));
        for p in &path.waypoints {
            out.push_str(&format!(
                "<circle cx=\"{}\" cy=\"{}\" r=\"2.5\" fill=\"{color}\"/>\n",
                sx(p.x),
                sy(p.y, h)
            ));
        }
    }

    out.push_str(&format!(
        "<circle cx=\"{}\" cy=\"{}\" r=\"5\" fill=\"#2e7d32\"/>\n",
        sx(scenario.start.x),
        sy(scenario.start.y, h)
    ));
    out.push_str(&format!(
        "<circle cx=\"{}\" cy=\"{}\" r=\"5\" fill=\"none\" stroke=\"#c62828\" stroke-width=\"2\"/>\n",
        sx(scenario.goal.x),
        sy(scenario.goal.y, h)
    ));
    out.push_str(&format!(
        "<circle cx=\"{}\" cy=\"{}\" r=\"{:.2}\" fill=\"none\" stroke=\"#c62828\" stroke-width=\"1\" stroke-dasharray=\"4 3\"/>\n",
        sx(scenario.goal.x),
        sy(scenario.goal.y, h),
        crate::metrics::SUCCESS_RADIUS * PX_PER_M
    ));
    out.push_str("</svg>\n");
    out
}
