"""Names shared across the pipeline."""

PHASES = ("non_contrast", "arterial", "delayed")

LESION_CLASSES = ("cyst", "hemangioma", "hcc")
CLASS_NAMES = LESION_CLASSES + ("background",)
BACKGROUND = CLASS_NAMES.index("background")

# Row labels and column headers of the framework comparison table.
ABLATION_LABELS = (
    "R-50",
    "R-101",
    "R-50-2.5D",
    "R-101 region fusion",
    "R-50 multi-modal",
    "R-101 multi-modal",
)
TABLE_COLUMNS = ("Liver Cyst (%)", "Hemangiomas (%)", "HCCs (%)")

SLAB_DEPTH = 9
HU_MIN = -1024
HU_MAX = 3071
