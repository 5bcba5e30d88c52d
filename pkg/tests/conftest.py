from hypothesis import settings

settings.register_profile("vidcap", max_examples=50, deadline=None)
settings.load_profile("vidcap")
