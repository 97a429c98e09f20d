//! Procedural mock spacecraft.
//!
//! Model frame: z up, origin at the bus centre. The solar wings lie in the
//! plane `x = 0` along ±y with their textured front facing +x; support
//! struts sit just behind them. Two features break the 180° azimuth symmetry
//! of the wings: the radiometer drum on the roof is offset towards +x and
//! the antenna hardware hangs off the −x face. The radiator patch on the +x
//! face is a texture-only marking.

use super::geom::{add, cross, normalize, scale, sub, V3};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Material {
    Bus,
    Radiator,
    Antenna,
    Radiometer,
    Strut,
    Panel,
}

#[derive(Clone, Copy, Debug)]
pub struct Tri {
    pub v: [V3; 3],
    pub normal: V3,
    pub material: Material,
}

/// Dimensions of the mock target in model units.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetModel {
    pub bus_half: V3,
    /// Inner and outer y of each wing.
    pub panel_span: (f64, f64),
    pub panel_half_height: f64,
    /// Distance of the strut frame behind the wing plane.
    pub strut_offset: f64,
    pub strut_radius: f64,
    pub radiometer_radius: f64,
    pub radiometer_height: f64,
    /// x offset of the radiometer axis.
    pub radiometer_x: f64,
    pub dish_radius: f64,
}

impl Default for TargetModel {
    fn default() -> Self {
        Self {
            bus_half: [0.6, 0.5, 0.55],
            panel_span: (0.8, 2.35),
            panel_half_height: 0.45,
            strut_offset: 0.07,
            strut_radius: 0.035,
            radiometer_radius: 0.22,
            radiometer_height: 0.42,
            radiometer_x: 0.25,
            dish_radius: 0.24,
        }
    }
}

impl TargetModel {
    /// Radius of a sphere about the origin containing every vertex.
    pub fn bounding_radius(&self) -> f64 {
        self.mesh()
            .iter()
            .flat_map(|t| t.v.iter())
            .map(|p| super::geom::dot(*p, *p).sqrt())
            .fold(0.0, f64::max)
    }

    pub fn mesh(&self) -> Vec<Tri> {
        let mut m = Mesh::default();
        let [bx, by, bz] = self.bus_half;
        m.cuboid([0.0, 0.0, 0.0], self.bus_half, Material::Bus);
        // radiator marking, raised slightly off the +x face
        m.quad(
            [bx + 1e-3, -0.7 * by, -0.75 * bz],
            [0.0, 1.4 * by, 0.0],
            [0.0, 0.0, 0.9 * bz],
            Material::Radiator,
        );
        // antenna hardware on −x
        m.cuboid([-bx - 0.1, 0.55 * by, 0.45 * bz], [0.1, 0.09, 0.09], Material::Antenna);
        m.cuboid([-bx - 0.06, -0.55 * by, 0.5 * bz], [0.06, 0.07, 0.14], Material::Antenna);
        m.cylinder(
            [-bx - 0.02, 0.0, -0.4 * bz],
            [-1.0, 0.0, 0.0],
            self.dish_radius,
            0.1,
            14,
            Material::Antenna,
        );
        m.cylinder(
            [self.radiometer_x, 0.0, bz],
            [0.0, 0.0, 1.0],
            self.radiometer_radius,
            self.radiometer_height,
            16,
            Material::Radiometer,
        );

        let (y0, y1) = self.panel_span;
        let h = self.panel_half_height;
        let so = self.strut_offset;
        let r = self.strut_radius;
        for side in [-1.0, 1.0] {
            // yoke from the bus wall to the wing root
            m.bar([0.0, side * by, 0.0], [-so, side * (y0 + 0.05), 0.0], r * 1.3, Material::Strut);
            // wing; the quad's winding puts its geometric normal on +x
            let (a, b) = if side > 0.0 { (y0, y1) } else { (-y1, -y0) };
            m.quad([0.0, a, -h], [0.0, b - a, 0.0], [0.0, 0.0, 2.0 * h], Material::Panel);
            // strut frame: two rails and a zig-zag
            for z in [-0.6 * h, 0.6 * h] {
                m.bar([-so, side * y0, z], [-so, side * y1, z], r, Material::Strut);
            }
            let n = 4;
            for k in 0..n {
                let ya = y0 + (y1 - y0) * k as f64 / n as f64;
                let yb = y0 + (y1 - y0) * (k + 1) as f64 / n as f64;
                let (za, zb) = if k % 2 == 0 { (-0.6 * h, 0.6 * h) } else { (0.6 * h, -0.6 * h) };
                m.bar([-so, side * ya, za], [-so, side * yb, zb], r, Material::Strut);
            }
        }
        m.tris
    }
}

#[derive(Default)]
struct Mesh {
    tris: Vec<Tri>,
}

impl Mesh {
    fn tri(&mut self, a: V3, b: V3, c: V3, material: Material) {
        let normal = normalize(cross(sub(b, a), sub(c, a)));
        self.tris.push(Tri {
            v: [a, b, c],
            normal,
            material,
        });
    }

    /// Parallelogram with corner `o` and edges `u`, `v`; normal along u × v.
    fn quad(&mut self, o: V3, u: V3, v: V3, material: Material) {
        let (a, b, c, d) = (o, add(o, u), add(add(o, u), v), add(o, v));
        self.tri(a, b, c, material);
        self.tri(a, c, d, material);
    }

    fn cuboid(&mut self, c: V3, h: V3, material: Material) {
        let ex = [2.0 * h[0], 0.0, 0.0];
        let ey = [0.0, 2.0 * h[1], 0.0];
        let ez = [0.0, 0.0, 2.0 * h[2]];
        let lo = sub(c, h);
        let hi = add(c, h);
        self.quad(lo, ey, ex, material); // -z
        self.quad([lo[0], lo[1], hi[2]], ex, ey, material); // +z
        self.quad(lo, ex, ez, material); // -y
        self.quad([lo[0], hi[1], lo[2]], ez, ex, material); // +y
        self.quad(lo, ez, ey, material); // -x
        self.quad([hi[0], lo[1], lo[2]], ey, ez, material); // +x
    }

    /// Capped cylinder from `base` along unit `axis`.
    fn cylinder(&mut self, base: V3, axis: V3, radius: f64, length: f64, segments: usize, material: Material) {
        let helper = if axis[2].abs() < 0.9 { [0.0, 0.0, 1.0] } else { [1.0, 0.0, 0.0] };
        let e1 = normalize(cross(axis, helper));
        let e2 = cross(axis, e1);
        let top = add(base, scale(axis, length));
        let rim = |k: usize, at: V3| {
            let t = std::f64::consts::TAU * k as f64 / segments as f64;
            add(at, add(scale(e1, radius * t.cos()), scale(e2, radius * t.sin())))
        };
        for k in 0..segments {
            let (b0, b1, t0, t1) = (rim(k, base), rim(k + 1, base), rim(k, top), rim(k + 1, top));
            self.tri(b0, b1, t1, material);
            self.tri(b0, t1, t0, material);
            self.tri(top, t0, t1, material);
            self.tri(base, b1, b0, material);
        }
    }

    /// Square-section beam between two points.
    fn bar(&mut self, a: V3, b: V3, r: f64, material: Material) {
        let axis = sub(b, a);
        let len = super::geom::dot(axis, axis).sqrt();
        let axis = scale(axis, 1.0 / len);
        let helper = if axis[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 0.0, 1.0] };
        let e1 = scale(normalize(cross(axis, helper)), r);
        let e2 = scale(normalize(cross(axis, e1)), r);
        let corners = [
            add(e1, e2),
            add(scale(e1, -1.0), e2),
            add(scale(e1, -1.0), scale(e2, -1.0)),
            add(e1, scale(e2, -1.0)),
        ];
        for k in 0..4 {
            let (c0, c1) = (corners[k], corners[(k + 1) % 4]);
            self.tri(add(a, c0), add(a, c1), add(b, c1), material);
            self.tri(add(a, c0), add(b, c1), add(b, c0), material);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wing_fronts_face_plus_x() {
        let mesh = TargetModel::default().mesh();
        let panels: Vec<_> = mesh.iter().filter(|t| t.material == Material::Panel).collect();
        assert_eq!(panels.len(), 4);
        assert!(panels.iter().all(|t| (t.normal[0] - 1.0).abs() < 1e-12));
    }

    #[test]
    fn bounding_radius_covers_the_wings() {
        let m = TargetModel::default();
        let r = m.bounding_radius();
        assert!(r > m.panel_span.1 && r < 3.0, "{r}");
    }
}
