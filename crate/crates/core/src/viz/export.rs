use std::io::Write;

use super::{Marker, PlotData};

/// One row per point, rectangle, and curve vertex. Floats use the shortest
/// representation that reads back to the same `f64`.
pub fn export_plot_csv<W: Write>(pd: &PlotData, mut w: W) -> std::io::Result<()> {
    writeln!(w, "# kind={} title={}", pd.kind.as_str(), pd.title.replace('\n', " "))?;
    writeln!(
        w,
        "# series: point = marker at (x,y); rect = lower-left corner (x,y) with width,height; curve = vertex `index` of curve `id`"
    )?;
    writeln!(w, "series,id,index,x,y,width,height,color,border,marker,style,label")?;
    let esc = |s: &Option<String>| {
        s.as_deref()
            .map(|t| {
                if t.contains([',', '"', '\n']) {
                    format!("\"{}\"", t.replace('"', "\"\""))
                } else {
                    t.to_string()
                }
            })
            .unwrap_or_default()
    };
    for (k, p) in pd.points.iter().enumerate() {
        let marker = match p.marker {
            Marker::Circle => "circle",
            Marker::Diamond => "diamond",
        };
        writeln!(
            w,
            "point,{k},0,{},{},,,{},{},{marker},,{}",
            p.x,
            p.y,
            p.color.hex(),
            p.border,
            esc(&p.label)
        )?;
    }
    for (k, r) in pd.rects.iter().enumerate() {
        writeln!(
            w,
            "rect,{k},0,{},{},{},{},{},false,,,{}",
            r.x,
            r.y,
            r.width,
            r.height,
            r.color.hex(),
            esc(&r.label)
        )?;
    }
    for (k, c) in pd.curves.iter().enumerate() {
        let style = if c.segments {
            format!("{}-segments", c.style.as_str())
        } else {
            c.style.as_str().to_string()
        };
        for (i, (x, y)) in c.points.iter().enumerate() {
            writeln!(
                w,
                "curve,{k},{i},{x},{y},,,{},false,,{style},{}",
                c.color.hex(),
                esc(&c.label)
            )?;
        }
    }
    Ok(())
}

pub fn plot_csv_string(pd: &PlotData) -> String {
    let mut buf = Vec::new();
    export_plot_csv(pd, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("utf-8")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::viz::{Axis, Color, Point, PlotKind};

    #[test]
    fn coordinates_round_trip_exactly() {
        let mut pd = PlotData::new(PlotKind::Qq, "q", Axis::fixed("x", 0.0, 1.0), Axis::fixed("y", 0.0, 1.0));
        let vals = [0.1 + 0.2, 1.0 / 3.0, 2f64.sqrt() / 7.0, 1e-300];
        for &v in &vals {
            pd.points.push(Point {
                x: v,
                y: 1.0 - v,
                color: Color::Class(0),
                border: false,
                marker: Marker::Circle,
                label: Some("a,b".into()),
            });
        }
        let text = plot_csv_string(&pd);
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        for (rec, &v) in rdr.records().zip(&vals) {
            let rec = rec.unwrap();
            assert_eq!(rec[3].parse::<f64>().unwrap().to_bits(), v.to_bits());
            assert_eq!(rec[4].parse::<f64>().unwrap().to_bits(), (1.0 - v).to_bits());
            assert_eq!(&rec[11], "a,b");
        }
    }
}
