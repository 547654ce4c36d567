"""Configure Django for pytest, as manage.py does for the Django test runner."""
import os

import django

os.environ.setdefault("DJANGO_SETTINGS_MODULE", "project.settings")
django.setup()
