from src.serving.inference import RunStats, localize, segment, infer, find_model

__all__ = ['RunStats', 'localize', 'segment', 'infer', 'find_model']
