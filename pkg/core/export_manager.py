"""
Export Manager for detector outputs, evaluation reports and sweep tables
"""

import logging
from pathlib import Path
from typing import Iterable, List, Optional

import numpy as np

from reportlab.lib import colors
from reportlab.lib.enums import TA_CENTER
from reportlab.lib.pagesizes import A4
from reportlab.lib.styles import getSampleStyleSheet, ParagraphStyle
from reportlab.lib.units import inch
from reportlab.platypus import SimpleDocTemplate, Table, TableStyle, Paragraph, Spacer

from config.config import (
    APP_NAME, SCORES_FILE, BLOCK_RECORDS_FILE, MAPS_SUBDIR, REPORT_FILE, ROC_FILE, SWEEP_FILE
)
from core.detector import AnomalyMap
from core.evaluation import EvalReport, SCORE_COLUMNS
from core.exceptions import FormatError
from core.utils import ensure_directory, export_to_csv, export_to_json, format_float, write_mask

logger = logging.getLogger(__name__)

SWEEP_COLUMNS = ['lambda_a', 'f_frames', 'block_size', 'auc', 'frame_eer', 'pixel_eer']


class ExportManager:
    """Writes the files of one run directory"""

    def __init__(self, out_dir):
        self.out_dir = ensure_directory(out_dir)

    # ========================================================================
    # DETECTOR OUTPUTS
    # ========================================================================

    def write_scores(self, maps: Iterable[AnomalyMap], filename: str = SCORES_FILE) -> Path:
        """
        Per-frame score records

        Columns: frame_index, frame_score, active_blocks, anomalous_blocks.
        """
        rows = [{
            'frame_index': m.frame_index,
            'frame_score': format_float(m.frame_score),
            'active_blocks': m.active_blocks,
            'anomalous_blocks': m.anomalous_blocks,
        } for m in maps]
        path = self.out_dir / filename
        if not export_to_csv(rows, path, SCORE_COLUMNS):
            raise OSError(f"Could not write {path}")
        return path

    def write_maps(self, maps: Iterable[AnomalyMap], n: int, height: int, width: int) -> Path:
        """
        Anomaly masks as binary PGM, per frame:
            block_<index>.pgm   block resolution
            pixel_<index>.pgm   block-filled pixel resolution
            fg_<index>.pgm      pixel resolution restricted to foreground
        """
        map_dir = ensure_directory(self.out_dir / MAPS_SUBDIR)
        count = 0
        for m in maps:
            k = m.frame_index
            write_mask(map_dir / f"block_{k:06d}.pgm", m.anomalous)
            write_mask(map_dir / f"pixel_{k:06d}.pgm", m.pixel_mask(n, height, width))
            if m.foreground is not None:
                write_mask(map_dir / f"fg_{k:06d}.pgm",
                           m.pixel_mask(n, height, width, foreground_only=True))
            count += 1
        logger.info(f"Wrote {count} anomaly maps to {map_dir}")
        return map_dir

    def write_block_records(self, records: dict, filename: str = BLOCK_RECORDS_FILE) -> Path:
        path = self.out_dir / filename
        np.savez_compressed(path, **records)
        logger.info(f"Block records saved: {path}")
        return path

    # ========================================================================
    # EVALUATION OUTPUTS
    # ========================================================================

    def write_report(self, report: EvalReport, filename: str = REPORT_FILE) -> Path:
        path = self.out_dir / filename
        if not export_to_json(report.to_dict(), path):
            raise OSError(f"Could not write {path}")
        return path

    def write_roc(self, report: EvalReport, filename: str = ROC_FILE) -> Path:
        rows = [{'fpr': format_float(fpr), 'tpr': format_float(tpr)} for fpr, tpr in report.roc]
        path = self.out_dir / filename
        if not export_to_csv(rows, path, ['fpr', 'tpr']):
            raise OSError(f"Could not write {path}")
        return path

    def write_sweep(self, rows: List[dict], filename: str = SWEEP_FILE) -> Path:
        """Sweep table, one row per parameter setting"""
        formatted = [{key: _cell(row.get(key)) for key in SWEEP_COLUMNS} for row in rows]
        path = self.out_dir / filename
        if not export_to_csv(formatted, path, SWEEP_COLUMNS):
            raise OSError(f"Could not write {path}")
        return path

    # ========================================================================
    # PDF EXPORT
    # ========================================================================

    def export_report_pdf(self, report: EvalReport, sweep_rows: Optional[List[dict]] = None,
                          title: str = "Evaluation Summary", filename: str = "report.pdf") -> Optional[str]:
        """
        Evaluation summary as PDF: headline metrics, optional sweep table
        and a subsampled ROC table

        Returns:
            str: Path to generated PDF, None on failure
        """
        try:
            filepath = self.out_dir / filename
            doc = SimpleDocTemplate(str(filepath), pagesize=A4, invariant=1,
                                    title=title, author=APP_NAME)
            elements = []
            styles = getSampleStyleSheet()

            title_style = ParagraphStyle(
                'SummaryTitle',
                parent=styles['Heading1'],
                fontSize=20,
                textColor=colors.HexColor('#6D8196'),
                alignment=TA_CENTER
            )
            elements.append(Paragraph(APP_NAME, title_style))
            elements.append(Paragraph(title, styles['Heading2']))
            elements.append(Spacer(1, 0.2 * inch))

            metrics = [
                ['Frames:', str(report.frames)],
                ['Anomalous frames:', str(report.positives)],
                ['Frame-level AUC:', f"{report.auc:.4f}"],
                ['Frame-level EER:', f"{report.frame_eer:.4f}"],
                ['Pixel-level EER:', 'n/a' if report.pixel_eer is None else f"{report.pixel_eer:.4f}"],
            ]
            elements.append(self._key_value_table(metrics))
            elements.append(Spacer(1, 0.3 * inch))

            if sweep_rows:
                elements.append(Paragraph("Parameter Sweep", styles['Heading3']))
                data = [SWEEP_COLUMNS] + [[_cell(row.get(k), 4) for k in SWEEP_COLUMNS] for row in sweep_rows]
                elements.append(self._grid_table(data))
                elements.append(Spacer(1, 0.3 * inch))

            elements.append(Paragraph("ROC Points", styles['Heading3']))
            step = max(1, len(report.roc) // 25)
            points = report.roc[::step]
            if report.roc and points[-1] != report.roc[-1]:
                points.append(report.roc[-1])
            data = [['FPR', 'TPR']] + [[f"{fpr:.4f}", f"{tpr:.4f}"] for fpr, tpr in points]
            elements.append(self._grid_table(data))

            doc.build(elements)
            logger.info(f"PDF report generated: {filepath}")
            return str(filepath)

        except Exception as e:
            logger.error(f"PDF export error: {e}")
            return None

    def _key_value_table(self, rows):
        table = Table(rows, colWidths=[2 * inch, 3 * inch])
        table.setStyle(TableStyle([
            ('FONTNAME', (0, 0), (-1, -1), 'Helvetica'),
            ('FONTSIZE', (0, 0), (-1, -1), 10),
            ('FONTNAME', (0, 0), (0, -1), 'Helvetica-Bold'),
            ('VALIGN', (0, 0), (-1, -1), 'TOP'),
            ('GRID', (0, 0), (-1, -1), 0.5, colors.grey),
        ]))
        return table

    def _grid_table(self, data):
        table = Table(data, repeatRows=1)
        table.setStyle(TableStyle([
            ('BACKGROUND', (0, 0), (-1, 0), colors.HexColor('#6D8196')),
            ('TEXTCOLOR', (0, 0), (-1, 0), colors.whitesmoke),
            ('FONTNAME', (0, 0), (-1, 0), 'Helvetica-Bold'),
            ('FONTSIZE', (0, 0), (-1, -1), 8),
            ('ALIGN', (0, 0), (-1, -1), 'CENTER'),
            ('GRID', (0, 0), (-1, -1), 0.5, colors.grey),
            ('ROWBACKGROUNDS', (0, 1), (-1, -1), [colors.white, colors.HexColor('#F5F5F5')]),
        ]))
        return table


def _cell(value, digits: Optional[int] = None) -> str:
    if value is None:
        return ''
    if isinstance(value, float):
        return f"{value:.{digits}f}" if digits else format_float(value)
    return str(value)


def load_block_records(path) -> dict:
    """
    Read block records written by ``write_block_records``

    Raises:
        FormatError: Missing or unreadable archive
    """
    path = Path(path)
    try:
        with np.load(path, allow_pickle=False) as archive:
            records = {key: archive[key] for key in archive.files}
    except (OSError, ValueError) as e:
        logger.error(f"Cannot read block records {path}: {e}")
        raise FormatError(f"Cannot read block records {path}: {e}")
    required = ('frame_index', 'active', 'features', 'scores', 'decided', 'block_size',
                'f_frames', 'lambda_f', 'lambda_a', 'lambda_a_scale', 'prior', 'order_bounds',
                'refinement', 'model')
    missing = [key for key in required if key not in records]
    if missing:
        raise FormatError(f"{path}: missing arrays {', '.join(missing)}")
    return records
