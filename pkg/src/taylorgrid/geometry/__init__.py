from .extract import extract_mesh, marching_cubes, marching_squares
from .image import (Image2D, NoSurfaceError, binarize, disk_image, fit_image, glyph_image, image_cells, image_domain,
                    image_sdf, image_sdf_pixels, pixel_points)
from .mesh import IngestionError, TriMesh, cube_mesh, icosphere, load_mesh, write_obj
from .metrics import chamfer_l1, iou
from .oracle import NotWatertightError, signed_distance, signed_distance_oracle, unsigned_distance
from .sampling import MeshShape, Shape, SphereShape, sample_points, split_counts
