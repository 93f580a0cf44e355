use super::{Fill, Geometry, Image, ShapeSpec, OUTLINE_THICKNESS};

/// Hard rasterization of one shape on a black canvas.
///
/// A pixel `(x, y)` belongs to a circle when `(x-cx)² + (y-cy)² <= r²`; the
/// outline keeps the pixels whose squared distance also exceeds
/// `(r - thickness)²`. Rectangles span `w` columns starting at `cx - w/2`
/// (and likewise for rows); their outline is the band within `thickness`
/// pixels of the rectangle's own edges. Anything outside the canvas is
/// clipped.
pub fn render_shape(spec: &ShapeSpec, height: usize, width: usize) -> Image {
    let mut img = Image::black(height, width);
    let t = OUTLINE_THICKNESS as i64;
    let (cx, cy) = (i64::from(spec.center_x), i64::from(spec.center_y));

    let inside: Box<dyn Fn(i64, i64) -> bool> = match spec.geometry {
        Geometry::Circle { radius } => {
            let r = i64::from(radius);
            let outer = r * r;
            let inner = (r - t).max(0).pow(2);
            let outline = spec.fill == Fill::Outline && r > t;
            Box::new(move |x, y| {
                let d2 = (x - cx).pow(2) + (y - cy).pow(2);
                d2 <= outer && (!outline || d2 > inner)
            })
        }
        Geometry::Rectangle { width: w, height: h } => {
            let (w, h) = (i64::from(w), i64::from(h));
            let x0 = cx - w / 2;
            let y0 = cy - h / 2;
            let (x1, y1) = (x0 + w - 1, y0 + h - 1);
            let outline = spec.fill == Fill::Outline;
            Box::new(move |x, y| {
                let within = x >= x0 && x <= x1 && y >= y0 && y <= y1;
                within
                    && (!outline
                        || x - x0 < t
                        || x1 - x < t
                        || y - y0 < t
                        || y1 - y < t)
            })
        }
    };

    for y in 0..height {
        for x in 0..width {
            if inside(x as i64, y as i64) {
                img.set_pixel(y, x, spec.color);
            }
        }
    }
    img
}
